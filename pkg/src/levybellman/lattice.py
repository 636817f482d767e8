"""Uniform Cartesian grid on a box, multilinear interpolation, difference
quotients and farfield rules for points outside the box."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Grid:
    """Nodes x = i * dx with lo[k] <= i[k] <= hi[k] (integer index bounds)."""
    dx: float
    lo: tuple
    hi: tuple
    dt: float | None = None
    horizon: float | None = None

    def __post_init__(self):
        if not 0 < self.dx < 1:
            raise ConfigurationError("dx must lie in (0, 1)")
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != len(hi) or any(h - l < 2 for l, h in zip(lo, hi)):
            raise ConfigurationError("need at least 3 nodes per axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.dt is not None and self.horizon is not None:
            steps = self.horizon / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigurationError("horizon / dt must be an integer")

    @classmethod
    def box(cls, bounds, dx, dt=None, horizon=None) -> "Grid":
        lo, hi = [], []
        for a, b in bounds:
            ia, ib = a / dx, b / dx
            if abs(ia - round(ia)) > 1e-8 or abs(ib - round(ib)) > 1e-8:
                raise ConfigurationError(f"box bounds {a}, {b} are not multiples of dx={dx}")
            lo.append(round(ia))
            hi.append(round(ib))
        return cls(float(dx), tuple(lo), tuple(hi), dt, horizon)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.lo, dtype=float) * self.dx

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.hi, dtype=float) * self.dx

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def axes(self) -> list:
        return [np.arange(l, h + 1) * self.dx for l, h in zip(self.lo, self.hi)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_index(self, multi) -> np.ndarray:
        """Global integer multi-index (..., N) -> flat node index."""
        multi = np.asarray(multi, dtype=np.int64)
        local = multi - np.array(self.lo)
        return np.ravel_multi_index(tuple(np.moveaxis(local, -1, 0)), self.shape)

    def node_index(self, node) -> int:
        """Flat index of a node given as a flat int or a multi-index."""
        return int(node) if np.ndim(node) == 0 else int(self.flat_index(node))

    def multi_index(self, flat) -> np.ndarray:
        local = np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)
        return local + np.array(self.lo)

    def contains(self, X, tol=1e-12) -> np.ndarray:
        X = np.atleast_2d(X)
        slack = tol * self.dx
        return np.all((X >= self.lower - slack) & (X <= self.upper + slack), axis=1)

    def clamp(self, X) -> np.ndarray:
        return np.clip(np.atleast_2d(X), self.lower, self.upper)

    def locate(self, X):
        """Multilinear weights for the points X (n, N).

        Returns (nodes (n, 2^N), weights (n, 2^N), inside (n,)). Rows of
        points outside the box are meaningless and flagged by ``inside``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, N = X.shape
        shape = np.array(self.shape)
        s = X / self.dx - np.array(self.lo)
        i0 = np.clip(np.floor(s), 0, shape - 2).astype(np.int64)
        frac = np.clip(s - i0, 0.0, 1.0)
        corners = np.array(list(product((0, 1), repeat=N)), dtype=np.int64)   # (2^N, N)
        idx = i0[:, None, :] + corners[None, :, :]
        w = np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
        nodes = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)
        return nodes, w, self.contains(X)

    def interpolation_weights(self, x) -> list:
        """Sparse list of (global multi-index, weight) for one in-box point."""
        nodes, w, inside = self.locate(np.asarray(x, dtype=float).reshape(1, -1))
        if not inside[0]:
            return []
        keep = w[0] > 0
        return [(tuple(int(v) for v in self.multi_index(k)), float(wk))
                for k, wk in zip(nodes[0][keep], w[0][keep])]


# ------------------------------------------------------------------ farfield

@dataclass(frozen=True)
class Farfield:
    """Rule for values outside the box.

    kind: 'initial'  -> g(x) at the query point
          'clamp'    -> nearest boundary value (constant extension)
          'function' -> fn(t, X), optionally factored as time_factor(t) * fn(0, X)
          'periodic' -> wrap into the box (box length = period)
    """
    kind: str = "initial"
    fn: Callable | None = None
    time_factor: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("initial", "clamp", "function", "periodic"):
            raise ConfigurationError(f"unknown farfield rule {self.kind!r}")
        if self.kind in ("initial", "function") and self.fn is None:
            raise ConfigurationError(f"farfield {self.kind!r} needs a function")

    @classmethod
    def initial(cls, g):
        return cls("initial", lambda t, X: g(X))

    @classmethod
    def function(cls, fn, time_factor=None):
        return cls("function", fn, time_factor)

    @property
    def time_independent(self) -> bool:
        return self.kind == "initial"

    def remap(self, grid: Grid, X) -> np.ndarray:
        """Map points onto the box for rules that never leave the grid."""
        if self.kind == "clamp":
            return grid.clamp(X)
        if self.kind == "periodic":
            lo, hi = grid.lower, grid.upper
            return lo + np.mod(np.atleast_2d(X) - lo, hi - lo)
        return np.atleast_2d(X)

    def values(self, t, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind in ("clamp", "periodic"):
            raise ConfigurationError("grid-mapped farfield has no explicit values")
        if self.time_factor is not None:
            return float(self.time_factor(t)) * np.asarray(self.fn(0.0, X), dtype=float).reshape(len(X))
        return np.asarray(self.fn(t, X), dtype=float).reshape(len(X))


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray
    farfield: Farfield
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(self.grid.size))
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid function values must be finite")

    def __call__(self, X) -> np.ndarray:
        return interpolate(self, X)

    def to_csv(self, path):
        pts = self.grid.points()
        header = [f"x{k + 1}" for k in range(self.grid.dim)] + ["value"]
        write_csv(path, header, np.column_stack([pts, self.values]))


def interpolate(u: GridFunction, X) -> np.ndarray:
    """Evaluate u anywhere: multilinear inside the box, farfield outside."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X = u.farfield.remap(u.grid, X)
    nodes, w, inside = u.grid.locate(X)
    out = np.empty(len(X))
    out[inside] = (u.values[nodes[inside]] * w[inside]).sum(axis=1)
    if not np.all(inside):
        out[~inside] = u.farfield.values(u.t, X[~inside])
    return out


# ---------------------------------------------------------- difference quotients

def diff_forward(phi, r, h):
    return (phi(r + h) - phi(r)) / h


def diff_backward(phi, r, h):
    return (phi(r) - phi(r - h)) / h


def diff_second(phi, r, k):
    return (phi(r + k) - 2 * phi(r) + phi(r - k)) / k**2


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

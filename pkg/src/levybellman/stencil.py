"""Assembled monotone operators in difference form.

An operator acts on a grid vector U as

    (A U)_i = sum_j W_ij (U_j - U_i) + sum_k w_k (F(t, y_k) - U_i)

with W >= 0 off the diagonal and farfield targets y_k evaluated by the
farfield rule. Self references are dropped (they contribute nothing).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lattice import Farfield, Grid, write_csv


@dataclass(frozen=True)
class Stencil:
    """Per-node view: targets are global multi-indices."""
    center: tuple
    targets: np.ndarray
    weights: np.ndarray
    farfield_points: np.ndarray
    farfield_weights: np.ndarray
    diag_mass: float
    effective_mass: float

    def __len__(self):
        return len(self.weights) + len(self.farfield_weights)

    def apply(self, grid: Grid, U, t=0.0, farfield: Farfield | None = None) -> float:
        U = np.asarray(U, dtype=float)
        c = U[grid.flat_index(self.center)]
        val = float(np.dot(self.weights, U[grid.flat_index(self.targets)] - c)) if len(self.weights) else 0.0
        if len(self.farfield_weights):
            val += float(np.dot(self.farfield_weights, farfield.values(t, self.farfield_points) - c))
        return val

    def to_csv(self, path, dx=1.0):
        rows = [list(tgt) + [w, "grid"] for tgt, w in zip(self.targets, self.weights)]
        rows += [list(np.asarray(p) / dx) + [w, "farfield"]
                 for p, w in zip(self.farfield_points, self.farfield_weights)]
        header = [f"i{k + 1}" for k in range(len(self.center))] + ["weight", "target"]
        write_csv(path, header, rows + [list(self.center) + [self.diag_mass, "diag_mass"]])


@dataclass
class Operator:
    grid: Grid
    matrix: sp.csr_matrix
    ff_rows: np.ndarray
    ff_weights: np.ndarray
    ff_points: np.ndarray
    nominal: np.ndarray                 # sum of all raw weights (conservative mass)
    mass: np.ndarray = field(init=False)
    _ff_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        n = self.grid.size
        self.mass = np.asarray(self.matrix.sum(axis=1)).ravel()
        if len(self.ff_rows):
            self.mass = self.mass + np.bincount(self.ff_rows, self.ff_weights, minlength=n)

    @classmethod
    def empty(cls, grid):
        n = grid.size
        return cls(grid, sp.csr_matrix((n, n)), np.zeros(0, np.int64), np.zeros(0),
                   np.zeros((0, grid.dim)), np.zeros(n))

    @property
    def size(self):
        return self.grid.size

    def farfield_vector(self, t, farfield: Farfield | None) -> np.ndarray:
        n = self.grid.size
        if not len(self.ff_rows):
            return np.zeros(n)
        if farfield is None:
            raise ValueError("operator has farfield targets but no farfield rule given")
        if farfield.time_independent or farfield.time_factor is not None:
            key = id(farfield)
            if key not in self._ff_cache:
                vals = farfield.values(0.0, self.ff_points)
                self._ff_cache[key] = (farfield, np.bincount(self.ff_rows, self.ff_weights * vals, minlength=n))
            base = self._ff_cache[key][1]
            return base if farfield.time_factor is None else float(farfield.time_factor(t)) * base
        vals = farfield.values(t, self.ff_points)
        return np.bincount(self.ff_rows, self.ff_weights * vals, minlength=n)

    def apply(self, U, t=0.0, farfield=None) -> np.ndarray:
        return self.matrix @ U - self.mass * U + self.farfield_vector(t, farfield)

    def combine(self, other: "Operator", a=1.0, b=1.0) -> "Operator":
        """a * self + b * other."""
        op = Operator(self.grid, (a * self.matrix + b * other.matrix).tocsr(),
                      np.concatenate([self.ff_rows, other.ff_rows]),
                      np.concatenate([a * self.ff_weights, b * other.ff_weights]),
                      np.concatenate([self.ff_points, other.ff_points]),
                      a * self.nominal + b * other.nominal)
        return op

    def min_weight(self) -> float:
        vals = [self.matrix.data.min()] if self.matrix.nnz else []
        if len(self.ff_weights):
            vals.append(self.ff_weights.min())
        return float(min(vals)) if vals else 0.0

    def stencil(self, node) -> Stencil:
        g = self.grid
        flat = g.node_index(node)
        row = self.matrix.getrow(flat)
        mask = self.ff_rows == flat
        return Stencil(tuple(int(v) for v in g.multi_index(flat)), g.multi_index(row.indices),
                       row.data.copy(), self.ff_points[mask], self.ff_weights[mask],
                       float(self.nominal[flat]), float(self.mass[flat]))


def assemble(grid: Grid, rows, targets, weights, farfield: Farfield | None,
             nominal=None, on_grid=False) -> Operator:
    """Build an operator from (row, target point, weight) triples.

    Off-grid targets are expanded through multilinear interpolation; targets
    outside the box become farfield entries unless the farfield rule maps
    them back onto the grid. With ``on_grid`` the targets are flat node
    indices already (and -1 marks an out-of-box node whose point is given
    in ``targets`` via a tuple (nodes, points)).
    """
    n = grid.size
    rows = np.asarray(rows, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    if nominal is None:
        nominal = np.bincount(rows, weights, minlength=n)
    keep = weights > 0
    rows, weights = rows[keep], weights[keep]
    if on_grid:
        nodes, pts = targets
        nodes, pts = np.asarray(nodes)[keep], np.asarray(pts)[keep]
        out = nodes < 0
        if np.any(out) and farfield is not None and farfield.kind in ("clamp", "periodic"):
            # map the offending points back onto the grid
            sub = assemble(grid, rows[out], pts[out], weights[out], farfield, nominal=np.zeros(n))
            base = _coo(grid, rows[~out], nodes[~out], weights[~out])
            return Operator(grid, (base + sub.matrix).tocsr(), sub.ff_rows, sub.ff_weights,
                            sub.ff_points, nominal)
        mat = _coo(grid, rows[~out], nodes[~out], weights[~out])
        return Operator(grid, mat, rows[out], weights[out], pts[out], nominal)

    pts = np.asarray(targets, dtype=float).reshape(len(keep), grid.dim)[keep]
    if farfield is not None:
        pts = farfield.remap(grid, pts)
    idx, w, inside = grid.locate(pts)
    r_in = np.repeat(rows[inside], idx.shape[1])
    c_in = idx[inside].ravel()
    w_in = (w[inside] * weights[inside, None]).ravel()
    mat = _coo(grid, r_in, c_in, w_in)
    out = ~inside
    return Operator(grid, mat, rows[out], weights[out], pts[out], nominal)


def _coo(grid, rows, cols, vals) -> sp.csr_matrix:
    n = grid.size
    mask = (rows != cols) & (vals > 0)
    mat = sp.csr_matrix((vals[mask], (rows[mask], cols[mask])), shape=(n, n))
    mat.sum_duplicates()
    return mat


def drift_operator(grid: Grid, bvec, farfield: Farfield | None, nodes=None) -> Operator:
    """Upwind first-order stencil for b . D phi: b_i^+ / dx towards +e_i and
    b_i^- / dx towards -e_i, per node."""
    n, N, dx = grid.size, grid.dim, grid.dx
    nodes = np.arange(n) if nodes is None else np.asarray(nodes)
    bvec = np.asarray(bvec, dtype=float).reshape(len(nodes), N)
    multi = grid.multi_index(nodes)
    rows, tn, tp, ws = [], [], [], []
    for i in range(N):
        for sign in (1, -1):
            w = np.maximum(sign * bvec[:, i], 0.0) / dx
            tgt = multi.copy()
            tgt[:, i] += sign
            rows.append(nodes)
            ws.append(w)
            tn.append(_node_or_minus(grid, tgt))
            tp.append(tgt * dx)
    return assemble(grid, np.concatenate(rows), (np.concatenate(tn), np.concatenate(tp)),
                    np.concatenate(ws), farfield, on_grid=True)


def _node_or_minus(grid, multi):
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    ok = np.all((multi >= lo) & (multi <= hi), axis=1)
    out = np.full(len(multi), -1, dtype=np.int64)
    if np.any(ok):
        out[ok] = grid.flat_index(multi[ok])
    return out

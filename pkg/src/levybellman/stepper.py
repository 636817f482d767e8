"""Fully discrete (theta, vartheta) scheme with a Bellman max over controls.

One step reads

    U^n = U^{n-1} - dt * max_a { -theta L^n U^n - (1 - theta) L^{n-1} U^{n-1}
                                 -vartheta J^n U^n - (1 - vartheta) J^{n-1} U^{n-1}
                                 + c^{n-1} U^{n-1} - f^{n-1} }

The implicit part is solved by the relaxation T U = U - eps * R(U), a
contraction with factor 1 - eps whenever eps (1 + dt (theta l + vartheta j)) <= 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _backend
from .errors import ConfigurationError, ConvergenceError, StepError
from .lattice import Farfield, Grid, GridFunction, write_csv
from .local import build_L
from .nonlocal_ops import JumpDiscretization
from .problem import ControlProblem, LevyKernel
from .stencil import Operator

CFL_MODES = ("enforce", "auto_dt", "off")


@dataclass
class SchemeConfig:
    theta: float = 0.0
    vartheta: float = 0.0
    dt: float | None = None
    fp_eps: float | None = None
    fp_tol: float = 1e-10
    max_iter: int = 100_000
    cfl_mode: str = "enforce"

    def __post_init__(self):
        if not (0 <= self.theta <= 1 and 0 <= self.vartheta <= 1):
            raise ConfigurationError("theta and vartheta must lie in [0, 1]")
        if self.cfl_mode not in CFL_MODES:
            raise ConfigurationError(f"cfl_mode must be one of {CFL_MODES}")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.fp_eps is not None and self.fp_eps <= 0:
            raise ConfigurationError("fp_eps must be positive")

    @property
    def implicit(self) -> bool:
        return self.theta > 0 or self.vartheta > 0


@dataclass
class Level:
    """Operators and data of every control at one time."""
    t: float
    L: list
    J: list
    c: np.ndarray   # (m, n)
    f: np.ndarray   # (m, n)

    @property
    def lbar(self) -> np.ndarray:
        return np.array([op.nominal for op in self.L])

    @property
    def jbar(self) -> np.ndarray:
        return np.array([op.nominal for op in self.J])


def cfl_max_dt(lbar, jbar, c, theta, vartheta) -> float:
    """Largest dt with dt [(1 - theta) l + (1 - vartheta) j - c] <= 1 everywhere."""
    rate = (1 - theta) * np.asarray(lbar, float) + (1 - vartheta) * np.asarray(jbar, float) - np.asarray(c, float)
    top = float(np.max(rate)) if np.size(rate) else 0.0
    return math.inf if top <= 0 else 1.0 / top


@dataclass
class StepCoefficients:
    """Diagonal coefficients of the implicit and explicit sides and the
    smallest off-diagonal weight of either side."""
    implicit_diag: np.ndarray
    explicit_diag: np.ndarray
    min_offdiag: float

    @property
    def positive(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.implicit_diag))))
        return bool(self.explicit_diag.min() >= -1e-14 * scale and self.min_offdiag >= 0)


def step_coefficients(prev: Level, cur: Level, cfg: SchemeConfig, dt: float) -> StepCoefficients:
    th, vt = cfg.theta, cfg.vartheta
    imp = 1 + dt * th * cur.lbar + dt * vt * cur.jbar
    exp = 1 - dt * ((1 - th) * prev.lbar + (1 - vt) * prev.jbar - prev.c)
    w = [op.min_weight() for op in prev.L + prev.J + cur.L + cur.J]
    return StepCoefficients(imp, exp, min(w) if w else 0.0)


def explicit_part(U, level: Level, theta, vartheta, farfield=None) -> np.ndarray:
    """Per control: -(1-theta) L U - (1-vartheta) J U + c U - f, shape (m, n)."""
    out = level.c * U[None, :] - level.f
    for a, (L, J) in enumerate(zip(level.L, level.J)):
        if theta < 1:
            out[a] -= (1 - theta) * L.apply(U, level.t, farfield)
        if vartheta < 1:
            out[a] -= (1 - vartheta) * J.apply(U, level.t, farfield)
    return out


def explicit_step(U_prev, level: Level, cfg: SchemeConfig, dt: float, farfield=None):
    """Fully explicit update U_prev - dt * max_a E_a; returns (U, active)."""
    if cfg.cfl_mode != "off":
        dtmax = cfl_max_dt(level.lbar, level.jbar, level.c, cfg.theta, cfg.vartheta)
        if dt > dtmax * (1 + 1e-12):
            raise StepError(f"CFL violated: dt={dt:.4g} > {dtmax:.4g}")
    E = explicit_part(U_prev, level, cfg.theta, cfg.vartheta, farfield)
    best, act = _backend.core.bellman_max(np.ascontiguousarray(E))
    return U_prev - dt * best, act


@dataclass
class ImplicitSystem:
    """theta L_a + vartheta J_a for all controls stacked row-wise."""
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    mass: np.ndarray
    ops: list
    m: int
    n: int
    theta: float
    vartheta: float

    def farfield(self, t, farfield) -> np.ndarray:
        parts = []
        for L, J in self.ops:
            v = np.zeros(self.n)
            if self.theta:
                v += self.theta * L.farfield_vector(t, farfield)
            if self.vartheta:
                v += self.vartheta * J.farfield_vector(t, farfield)
            parts.append(v)
        return np.concatenate(parts)

    @property
    def max_mass(self) -> float:
        return float(self.mass.max()) if self.mass.size else 0.0

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.m * self.n, self.n))


def implicit_system(level: Level, cfg: SchemeConfig) -> ImplicitSystem:
    th, vt = cfg.theta, cfg.vartheta
    mats, mass = [], []
    for L, J in zip(level.L, level.J):
        mats.append(th * L.matrix + vt * J.matrix)
        mass.append(th * L.mass + vt * J.mass)
    S = sp.vstack(mats, format="csr")
    S.sum_duplicates()
    n = level.c.shape[1]
    return ImplicitSystem(S.indptr.astype(np.int64), S.indices.astype(np.int64), S.data.astype(float),
                          np.concatenate(mass), list(zip(level.L, level.J)), len(mats), n, th, vt)


def default_eps(system: ImplicitSystem, dt: float) -> float:
    return 0.9 / (1 + dt * system.max_mass)


def _check_eps(eps, system, dt):
    if eps * (1 + dt * system.max_mass) > 1 + 1e-12:
        raise ConfigurationError(f"fp_eps={eps:.4g} breaks the contraction condition "
                                 f"(needs <= {1 / (1 + dt * system.max_mass):.4g})")


@dataclass
class FixedPoint:
    U: np.ndarray
    active: np.ndarray
    iterations: int
    residual: float
    history: np.ndarray
    eps: float


def implicit_solve(U_prev, E, system: ImplicitSystem, cfg: SchemeConfig, dt: float, t: float,
                   farfield=None, U0=None, backend=None) -> FixedPoint:
    """Solve U = U_prev - dt max_a {-(A_a U) + E_a} by relaxation (Jacobi sweeps)."""
    eps = cfg.fp_eps if cfg.fp_eps is not None else default_eps(system, dt)
    _check_eps(eps, system, dt)
    b = np.ascontiguousarray(E, dtype=float).ravel() - system.farfield(t, farfield)
    u = np.array(U_prev if U0 is None else U0, dtype=float)
    core = _backend.get(backend)
    act, it, hist, ok = core.relax(system.indptr, system.indices, system.data, system.mass, b,
                                   np.ascontiguousarray(U_prev, dtype=float), u, float(dt), float(eps),
                                   float(cfg.fp_tol), int(cfg.max_iter), int(system.m))
    hist = np.asarray(hist)
    if not ok:
        raise ConvergenceError(f"fixed point did not reach {cfg.fp_tol:g} in {cfg.max_iter} iterations "
                               f"(residual {hist[-1]:.3e})", residual_history=hist)
    return FixedPoint(u, np.asarray(act), int(it), float(hist[-1]), hist, eps)


def relaxation_map(system: ImplicitSystem, U_prev, E, dt: float, eps: float, t=0.0, farfield=None):
    """The map T U = U - eps R(U) of one implicit step (for contraction checks)."""
    S = system.matrix()
    b = np.ascontiguousarray(E, dtype=float).ravel() - system.farfield(t, farfield)
    m, n = system.m, system.n
    U_prev = np.asarray(U_prev, dtype=float)

    def T(U):
        U = np.asarray(U, dtype=float)
        Q = (b - S @ U + system.mass * np.tile(U, m)).reshape(m, n)
        R = U - U_prev + dt * Q.max(axis=0)
        return U - eps * R
    return T


# ---------------------------------------------------------------- driver

@dataclass
class StepDiagnostics:
    step: int
    t: float
    sup_norm: float
    bound: float
    cfl_margin: float
    iterations: int
    residual: float


@dataclass
class Solution:
    grid: Grid
    dt: float
    times: np.ndarray
    U: np.ndarray
    active: np.ndarray
    diagnostics: list
    trajectory: list | None = None
    actives: list | None = None
    farfield: Farfield | None = None
    coefficients_positive: bool = True
    labels: tuple = ()

    @property
    def stable(self) -> bool:
        return all(d.sup_norm <= d.bound * (1 + 1e-12) + 1e-14 for d in self.diagnostics)

    def field(self) -> GridFunction:
        return GridFunction(self.grid, self.U, self.farfield or Farfield("clamp"), float(self.times[-1]))

    def to_csv(self, path, steps_path=None):
        pts = self.grid.points()
        header = [f"x{k + 1}" for k in range(self.grid.dim)] + ["value", "active"]
        lab = [self.labels[a] if self.labels else int(a) for a in self.active]
        write_csv(path, header, [list(p) + [u, a] for p, u, a in zip(pts, self.U, lab)])
        if steps_path:
            write_csv(steps_path, ["step", "t", "sup_norm", "stability_bound", "cfl_margin",
                                   "iterations", "residual"],
                      [[d.step, d.t, d.sup_norm, d.bound, d.cfl_margin, d.iterations, d.residual]
                       for d in self.diagnostics])


class BellmanScheme:
    """Assembles per-level operators once (per time for time-dependent data)
    and marches the scheme."""

    def __init__(self, p: ControlProblem, kern: LevyKernel | None, grid: Grid, cfg: SchemeConfig,
                 farfield: Farfield | None = None, jump: JumpDiscretization | None = None,
                 controls=None, static_operators=None, **jump_opts):
        if grid.horizon is not None and abs(grid.horizon - p.horizon) > 1e-12:
            raise ConfigurationError("grid horizon differs from problem horizon")
        self.p, self.kernel, self.grid, self.cfg = p, kern, grid, cfg
        self.farfield = farfield if farfield is not None else Farfield.initial(p.g)
        if jump is None and kern is not None:
            jump = JumpDiscretization(kern, grid, **jump_opts)
        self.jump = jump
        self.controls = list(range(p.n_controls)) if controls is None else list(controls)
        self.X = grid.points()
        # operators may be frozen in time even when the data (c, f) is not
        self.static_operators = (not p.time_dependent) if static_operators is None else bool(static_operators)
        self._ops, self._data, self._systems = {}, {}, {}

    def level(self, t: float) -> Level:
        p, g, ff = self.p, self.grid, self.farfield
        okey = 0.0 if self.static_operators else t
        if okey not in self._ops:
            L, J = [], []
            for a in self.controls:
                L.append(build_L(p, a, t, g, ff))
                J.append(self.jump.assemble(p, a, t, ff) if self.jump is not None else Operator.empty(g))
            if len(self._ops) > 4:
                self._ops.pop(next(iter(self._ops)))
            self._ops[okey] = (L, J)
        dkey = t if p.time_dependent else 0.0
        if dkey not in self._data:
            c = [p.eval("discount", a, t, self.X) for a in self.controls]
            f = [p.eval("source", a, t, self.X) for a in self.controls]
            if len(self._data) > 4:
                self._data.pop(next(iter(self._data)))
            self._data[dkey] = (np.array(c, dtype=float), np.array(f, dtype=float))
        L, J = self._ops[okey]
        return Level(t, L, J, *self._data[dkey])

    def time_step(self) -> float:
        cfg, T = self.cfg, self.p.horizon
        if cfg.cfl_mode != "auto_dt":
            if cfg.dt is None:
                raise ConfigurationError("dt is required unless cfl_mode = auto_dt")
            steps = T / cfg.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigurationError("horizon / dt must be an integer")
            return T / round(steps)
        probe = [0.0] if not self.p.time_dependent else list(np.linspace(0.0, T, 5))
        dtmax = min(cfl_max_dt(lv.lbar, lv.jbar, lv.c, cfg.theta, cfg.vartheta)
                    for lv in (self.level(t) for t in probe))
        cand = min(dtmax, cfg.dt) if cfg.dt is not None else dtmax
        if not math.isfinite(cand):
            raise ConfigurationError("fully implicit scheme: give dt explicitly")
        steps = math.ceil(T / cand * (1 - 1e-12))
        return T / steps

    def _farfield_sup(self, lv: Level) -> float:
        ff = self.farfield
        if ff.kind in ("clamp", "periodic"):
            return 0.0
        vals = [np.abs(ff.values(lv.t, op.ff_points)).max() for op in lv.L + lv.J if len(op.ff_points)]
        return float(max(vals)) if vals else 0.0

    def step(self, U, prev: Level, t: float, dt: float, backend=None):
        """One time step from prev.t to t; returns (U, active, iterations,
        residual, cfl_margin, level at t)."""
        cfg, p = self.cfg, self.p
        margin = 1 - dt * ((1 - cfg.theta) * prev.lbar + (1 - cfg.vartheta) * prev.jbar - prev.c).max()
        if cfg.cfl_mode != "off" and margin < -1e-12:
            raise StepError(f"CFL violated at t={t:.4g}: dt={dt:.4g}, margin {margin:.3e}")
        if not cfg.implicit:
            E = explicit_part(U, prev, 0.0, 0.0, self.farfield)
            best, act = _backend.get(backend).bellman_max(np.ascontiguousarray(E))
            cur = self.level(t) if p.time_dependent else prev
            return U - dt * best, act, 0, 0.0, float(margin), cur
        cur = self.level(t)
        E = explicit_part(U, prev, cfg.theta, cfg.vartheta, self.farfield)
        fp = implicit_solve(U, E, self._system(cur), cfg, dt, t, self.farfield, backend=backend)
        return fp.U, fp.active, fp.iterations, fp.residual, float(margin), cur

    def run(self, U0=None, keep=True, backend=None) -> Solution:
        cfg, p = self.cfg, self.p
        dt = self.time_step()
        steps = int(round(p.horizon / dt))
        U = np.asarray(p.g(self.X) if U0 is None else U0, dtype=float).copy()
        prev = self.level(0.0)
        g_sup = max(float(np.abs(U).max()), self._farfield_sup(prev))
        c_sup = float(np.abs(prev.c).max())
        f_sup = float(np.abs(prev.f).max())
        traj = [U.copy()] if keep else None
        actives = [] if keep else None
        diags = []
        positive = True
        act = np.zeros(len(U), dtype=np.int64)
        for n in range(1, steps + 1):
            t = n * dt
            U, act, it, res, margin, cur = self.step(U, prev, t, dt, backend)
            positive &= step_coefficients(prev, cur, cfg, dt).positive or cfg.cfl_mode == "off"
            g_sup = max(g_sup, self._farfield_sup(cur))
            bound = math.exp(c_sup * t) * (g_sup + t * f_sup)
            diags.append(StepDiagnostics(n, t, float(np.abs(U).max()), bound, float(margin), it, res))
            if keep:
                traj.append(U.copy())
                actives.append(np.asarray(act).copy())
            prev = cur
            c_sup = max(c_sup, float(np.abs(prev.c).max()))
            f_sup = max(f_sup, float(np.abs(prev.f).max()))
        labels = tuple(p.controls[a] for a in self.controls)
        return Solution(self.grid, dt, dt * np.arange(steps + 1), U, np.asarray(act), diags, traj,
                        actives, self.farfield, bool(positive), labels)

    def _system(self, lv: Level) -> ImplicitSystem:
        key = (0.0 if self.static_operators else lv.t, self.cfg.theta, self.cfg.vartheta)
        if key not in self._systems:
            if not self.static_operators:
                self._systems.clear()
            self._systems[key] = implicit_system(lv, self.cfg)
        return self._systems[key]


def solve(p: ControlProblem, kern: LevyKernel | None, grid: Grid, cfg: SchemeConfig,
          farfield: Farfield | None = None, U0=None, keep=True, backend=None, **jump_opts) -> Solution:
    return BellmanScheme(p, kern, grid, cfg, farfield, **jump_opts).run(U0, keep, backend)


def discrete_comparison_check(run1: Solution, run2: Solution, tol=1e-10):
    """Is run1 <= run2 at every node and stored time? Returns (ok, max violation)."""
    A = run1.trajectory if run1.trajectory is not None else [run1.U]
    B = run2.trajectory if run2.trajectory is not None else [run2.U]
    if len(A) != len(B):
        raise ConfigurationError("runs have different numbers of time levels")
    worst = max(float(np.max(a - b)) for a, b in zip(A, B))
    worst = max(worst, 0.0)
    return worst <= tol, worst

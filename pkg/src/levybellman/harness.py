"""Reference quadrature for the jump operator, manufactured-solution runs
and convergence-rate fitting."""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import kernels as kn
from .errors import DataError, OracleError
from .lattice import Farfield, Grid, write_csv
from .problem import ControlProblem, LevyKernel
from .stepper import BellmanScheme, SchemeConfig

TWO_PI = 2 * math.pi


# ------------------------------------------------------------------ oracle

def _gradient(phi, x, h=1e-3):
    x = np.asarray(x, dtype=float)
    g = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        f = [float(phi((x + s * e)[None, :])[0]) for s in (-2, -1, 1, 2)]
        g[i] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return g


def _radial_integral(psi, w, Z, tol, label, r0=0.05, degree=7):
    """int_0^Z psi(r) w(r) dr where psi(r) = O(r^2) is a compensated
    difference (cancellation-prone near 0) and w may blow up like r^(-1-gamma).

    On [0, r0] psi is replaced by its interpolant sum_{k=2}^{degree} c_k r^k
    through Chebyshev points, which keeps the integrand free of cancellation."""
    opts = dict(epsabs=tol * 1e-3, epsrel=1e-12, limit=400)
    r0 = min(r0, Z / 4)
    nodes = 0.5 * r0 * (1 - np.cos(np.pi * (np.arange(degree - 1) + 0.5) / (degree - 1)))
    V = nodes[:, None] ** np.arange(2, degree + 1)[None, :]
    coef = np.linalg.solve(V, np.array([psi(r) for r in nodes]))
    poly = lambda r: float(np.polyval(np.concatenate([coef[::-1], [0.0, 0.0]]), r))
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            total += integrate.quad(lambda r: poly(r) * w(r), 0.0, r0, **opts)[0]
            edges = [r0] + [e for e in (0.25, 0.5, 1.0) if r0 < e < Z]
            while edges[-1] < Z:
                edges.append(min(2 * edges[-1], Z))
            F = lambda r: psi(r) * w(r)
            for lo, hi in zip(edges, edges[1:]):
                total += integrate.quad(F, lo, hi, **opts)[0]
        except integrate.IntegrationWarning as exc:
            raise OracleError(f"{label}: quadrature did not reach tolerance {tol:g} ({exc})") from None
    return total


def oracle_J(kern: LevyKernel, p: ControlProblem, alpha: int, t: float, x, phi, tol=1e-10,
             grad=None, phi_sup=None) -> float:
    """Adaptive quadrature of
        int (phi(x + eta) - phi(x) - 1_{|z|<=1} eta . D phi(x)) k(z) dz
    split at |z| = 1 and in dyadic shells towards 0. phi maps (n, N) -> (n,)."""
    x = np.asarray(x, dtype=float).ravel()
    M = kern.dim
    if M > 3:
        raise OracleError("oracle supports M <= 3")
    if kern.name == "zero":
        return 0.0
    g = np.asarray(grad(x) if grad is not None else _gradient(phi, x), dtype=float)
    px = float(phi(x[None, :])[0])
    sup = phi_sup if phi_sup is not None else max(1.0, abs(px))
    X1 = x[None, :]

    def psi(z):
        z = np.atleast_2d(z)
        eta = p.eval("jump", alpha, t, X1, z)[0]
        comp = float(eta @ g) if np.linalg.norm(z) <= 1 else 0.0
        return float(phi((x + eta)[None, :])[0]) - px - comp

    tail = kn._ray_tail(kern, np.eye(M)[0])
    Z = tail.radius(tol * 1e-2 / (2 * sup + 1), 0)
    if kern.support_radius is not None:
        Z = min(Z, kern.support_radius)

    def along(y):
        y = np.asarray(y, dtype=float)
        return _radial_integral(lambda r: psi(r * y), lambda r: float(kern(r * y[None, :])[0]) * r ** (M - 1),
                                Z, tol, "oracle")

    if M == 1:
        return along([1.0]) + along([-1.0])
    if M == 2:
        f = lambda th: along([math.cos(th), math.sin(th)])
        pts = [0.5 * math.pi, math.pi, 1.5 * math.pi]
        return integrate.quad(f, 0.0, TWO_PI, points=pts, epsabs=tol, limit=200)[0]
    f = lambda ph, th: along([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)]) * math.sin(th)
    return integrate.dblquad(f, 0.0, math.pi, 0.0, TWO_PI, epsabs=tol)[0]


# ---------------------------------------------------- manufactured solutions

def _translation_invariant(p: ControlProblem, alpha=0, samples=7, seed=0) -> bool:
    rng = np.random.default_rng(seed)
    N, M = p.dim_x, p.dim_z
    Z = rng.normal(size=(samples, M))
    base = p.eval("jump", alpha, 0.0, np.zeros((samples, N)), Z)
    for t in (0.0, 0.3 * p.horizon, p.horizon):
        X = rng.uniform(-3, 3, size=(samples, N))
        if not np.allclose(p.eval("jump", alpha, t, X, Z), base, rtol=1e-13, atol=1e-13):
            return False
    return True


def manufactured_problem(base: ControlProblem, kern: LevyKernel | None, tol=1e-10) -> ControlProblem:
    """Single-control problem whose exact solution is e^{-t} cos(sum x).

    The source is f = u_t - L u - J u + c u with the jump term from oracle_J."""
    if base.n_controls != 1:
        raise DataError("manufactured solutions need a single control")
    N = base.dim_x
    cos_s = lambda X: np.cos(np.atleast_2d(X).sum(axis=1))
    sin_s = lambda X: np.sin(np.atleast_2d(X).sum(axis=1))
    if kern is None or kern.name == "zero":
        jump_at = lambda X: np.zeros(len(X))
    elif _translation_invariant(base):
        one = np.ones(N)
        A = oracle_J(kern, base, 0, 0.0, np.zeros(N), cos_s, tol, grad=lambda x: -np.sin(x.sum()) * one)
        B = oracle_J(kern, base, 0, 0.0, np.zeros(N), sin_s, tol, grad=lambda x: np.cos(x.sum()) * one)
        jump_at = lambda X: A * cos_s(X) - B * sin_s(X)
    else:
        cache = {}

        def jump_at(X):
            out = np.empty(len(X))
            for i, x in enumerate(np.atleast_2d(X)):
                key = tuple(np.round(x, 12))
                if key not in cache:
                    cache[key] = oracle_J(kern, base, 0, 0.0, x, cos_s, tol,
                                          grad=lambda y: -np.sin(y.sum()) * np.ones(N))
                out[i] = cache[key]
            return out

    def source(t, X):
        X = np.atleast_2d(X)
        A = base.diffusion(0, t, X)
        b = base.eval("drift", 0, t, X)
        c = base.eval("discount", 0, t, X)
        cs, sn = cos_s(X), sin_s(X)
        Lu = -cs * A.sum(axis=(1, 2)) - sn * b.sum(axis=1)
        return math.exp(-t) * (-cs - Lu - jump_at(X) + c * cs)

    return dataclasses.replace(base, source=source, initial=cos_s, time_dependent=True)


def exact_solution(t, X):
    return math.exp(-t) * np.cos(np.atleast_2d(X).sum(axis=1))


@dataclass
class LevelResult:
    level: int
    dx: float
    dt: float
    dz: float
    sup_error: float
    steps: int


def manufactured_run(base: ControlProblem, kern: LevyKernel | None, levels, cfg: SchemeConfig,
                     dt_factor: float | None = 0.5, tol=1e-10, **jump_opts) -> list:
    """Sup-norm error at the horizon on the periodic boxes [0, 2 pi]^N with
    n nodes spacing per axis, one run per entry of ``levels``.

    dt per level: dt_factor * dx capped by the CFL bound (cfl_mode auto_dt)."""
    if not levels:
        raise DataError("empty level list")
    p = manufactured_problem(base, kern, tol)
    out = []
    for lev, n in enumerate(levels):
        dx = TWO_PI / n
        grid = Grid.box([(0.0, TWO_PI)] * p.dim_x, dx)
        c = dataclasses.replace(cfg, cfl_mode="auto_dt",
                                dt=cfg.dt if dt_factor is None else dt_factor * dx)
        scheme = BellmanScheme(p, kern, grid, c, Farfield("periodic"),
                               static_operators=not base.time_dependent, **jump_opts)
        sol = scheme.run(keep=False)
        err = float(np.abs(sol.U - exact_solution(p.horizon, grid.points())).max())
        dz = scheme.jump.dz if scheme.jump is not None else dx
        out.append(LevelResult(lev, dx, sol.dt, float(dz), err, len(sol.times) - 1))
    return out


# ------------------------------------------------------------- rate fitting

@dataclass
class OrderFit:
    slope: float
    pair_slopes: list


def estimate_order(pairs, min_levels=3) -> OrderFit:
    """Least-squares slope of log e against log h, plus successive pair slopes."""
    pairs = [(float(h), float(e)) for h, e in pairs]
    if len(pairs) < min_levels:
        raise DataError(f"need at least {min_levels} levels, got {len(pairs)}")
    if any(e <= 0 or h <= 0 for h, e in pairs):
        raise DataError("errors and steps must be positive")
    lh = np.log([h for h, _ in pairs])
    le = np.log([e for _, e in pairs])
    slope = float(np.polyfit(lh, le, 1)[0])
    pair = [float((le[i + 1] - le[i]) / (lh[i + 1] - lh[i])) for i in range(len(pairs) - 1)]
    return OrderFit(slope, pair)


def guaranteed_exponent(kern: LevyKernel | None) -> float:
    """Worst-case rate for merely Holder solutions: 1/5 below order one, 1/10 above."""
    if kern is None or kern.kind != "singular_gamma_ge_1":
        return 0.2
    return 0.1


@dataclass
class RateReport:
    rows: list
    fit: OrderFit
    guarantee: float

    @property
    def strictly_decreasing(self) -> bool:
        e = [r.sup_error for r in self.rows]
        return all(b < a for a, b in zip(e, e[1:]))

    @property
    def passed(self) -> bool:
        return self.strictly_decreasing and self.fit.slope >= max(0.5, self.guarantee)

    def table(self) -> list:
        out = []
        for i, r in enumerate(self.rows):
            order = "" if i == 0 else self.fit.pair_slopes[i - 1]
            out.append([r.level, r.dx, r.dt, r.dz, r.sup_error, order])
        out.append(["guarantee", "", "", "", "", self.guarantee])
        return out

    def to_csv(self, path):
        write_csv(path, ["level", "dx", "dt", "dz", "sup_error", "pair_order"], self.table())


def rate_report(base: ControlProblem, kern: LevyKernel | None, levels, cfg: SchemeConfig,
                dt_factor=0.5, tol=1e-10, **jump_opts) -> RateReport:
    rows = manufactured_run(base, kern, levels, cfg, dt_factor, tol, **jump_opts)
    fit = estimate_order([(r.dx, r.sup_error) for r in rows])
    return RateReport(rows, fit, guaranteed_exponent(kern))

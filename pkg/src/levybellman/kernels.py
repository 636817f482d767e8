"""Integrated tails of Levy densities, lattice weight tables, the positive
coefficients used by the jump stencils, and the drift corrections.

Everything is reduced to rays: along a unit direction y the radial density
is rho(s) = k(s y) s^(M-1), s > 0 (in 1-D the two rays are y = +1, -1).

Tail integrals against piecewise polynomial kernels are computed from
per-cell Bernstein moments

    m[j, p] = int_{cell j} rho(s) b_p((s - s_j) / h) ds,   b_p = C(3,p) v^p (1-v)^(3-p),

which are all non-negative. Every weight that must be non-negative is a
combination of these moments with non-negative coefficients, so positivity
(and monotonicity of the derived tables) holds exactly in floating point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, KernelError
from .problem import ControlProblem, LevyKernel, estimate_singularity

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
MAX_CELLS = 5_000_000


# ---------------------------------------------------------------- Bernstein

def _bern3(mono) -> np.ndarray:
    """Monomial coefficients in v (degree <= 3) -> cubic Bernstein coefficients."""
    a = [Fraction(x) for x in mono] + [Fraction(0)] * (4 - len(mono))
    out = [sum(Fraction(comb(k, i), comb(3, i)) * a[i] for i in range(k + 1)) for k in range(4)]
    return np.array([float(x) for x in out])


F = Fraction
UP = _bern3([0, 1])                                   # v
DOWN = _bern3([1, -1])                                # 1 - v
ONE = _bern3([1])
LIN = _bern3([0, 1])
# uniform cubic B-spline pieces, left to right
CUBIC = [_bern3([0, 0, 0, F(1, 6)]),
         _bern3([F(1, 6), F(1, 2), F(1, 2), F(-1, 2)]),
         _bern3([F(2, 3), 0, -1, F(1, 2)]),
         _bern3([F(1, 6), F(-1, 2), F(1, 2), F(-1, 6)])]
# uniform quadratic B-spline pieces
QUAD = [_bern3([0, 0, F(1, 2)]), _bern3([F(1, 2), 1, -1]), _bern3([F(1, 2), -1, F(1, 2)])]
HALF_HAT0 = _bern3([0, 0, F(1, 2), F(-1, 6)])          # (3 v^2 - v^3) / 6
# ramp convolved with a hat, T(w) on w in [-1, 0] and [0, 1]
RAMP_HAT = [_bern3([0, 0, 0, F(1, 6)]), _bern3([F(1, 6), F(1, 2), F(1, 2), F(-1, 6)])]


def sphere_rule(M: int, n: int | None = None, rule=None):
    """Positive quadrature on the unit sphere of R^M."""
    if rule is not None:
        dirs, w = (np.asarray(r, dtype=float) for r in rule)
        dirs = dirs.reshape(-1, M)
        if np.any(w <= 0):
            raise ConfigurationError("sphere quadrature weights must be positive")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1) > 1e-12):
            raise ConfigurationError("sphere nodes must be unit vectors")
        return dirs, w
    if M == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if M == 2:
        n = int(n or 32)
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n, 2 * np.pi / n)
    raise ConfigurationError("M >= 3 needs a user-supplied sphere rule (nodes, weights)")


def sphere_area(M: int) -> float:
    return 2 * np.pi ** (M / 2) / special.gamma(M / 2)


# ------------------------------------------------------------------- rays

@dataclass
class RadialTail:
    """Tail machinery for one radial density rho on (0, inf)."""
    rho: Callable
    gamma: float
    decay: float
    bound_K: float
    support: float | None = None
    finite: bool = False

    def breakpoints(self):
        return [self.support] if self.support is not None else []

    # envelope tail bounds (valid for Z >= 1 when decay > 0)
    def tail_bounds(self, Z):
        if self.support is not None and Z >= self.support:
            return 0.0, 0.0, 0.0
        a = self.decay
        base = self.bound_K * Z ** (-1 - self.gamma) * np.exp(-a * Z)
        return base / a, base / a**2, base / a**3

    def radius(self, tol: float, order: int) -> float:
        """Smallest Z >= 1 (up to bisection accuracy) whose neglected tails are <= tol."""
        if self.support is not None:
            return float(self.support)
        bound = lambda Z: max(self.tail_bounds(Z)[:order + 1])
        lo, hi = 1.0, 1.0
        while bound(hi) > tol:
            lo, hi = hi, 2 * hi
            if hi > 1e7:
                raise ConfigurationError(f"truncation tolerance {tol} unachievable")
        if bound(lo) <= tol:
            return lo
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if bound(mid) > tol else (lo, mid)
        return hi

    def _gl(self, a, b, f):
        x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        return 0.5 * (b - a) * np.dot(_GL_W, f(x))

    def moments(self, h: float, ncells: int) -> np.ndarray:
        """Bernstein moments m[j, p]; entries that diverge (cell 0 of a
        singular density) are NaN and never used."""
        m = np.zeros((ncells, 4))
        # cells >= 1: vectorised Gauss-Legendre, cells holding a breakpoint split
        j = np.arange(1, ncells)
        a = j * h
        s = a[:, None] + 0.5 * h * (_GL_X[None, :] + 1)
        v = (s - a[:, None]) / h
        r = self.rho(s)
        B = np.stack([comb(3, p) * v**p * (1 - v) ** (3 - p) for p in range(4)], axis=2)
        m[1:] = 0.5 * h * np.einsum("q,jq,jqp->jp", _GL_W, r, B)
        for bp in self.breakpoints():
            c = int(np.floor(bp / h))
            if 1 <= c < ncells and bp - c * h > 1e-14 * h:
                lo = c * h
                for p in range(4):
                    f = lambda s, p=p: self.rho(s) * comb(3, p) * ((s - lo) / h) ** p * (1 - (s - lo) / h) ** (3 - p)
                    m[c, p] = self._gl(lo, bp, f) + self._gl(bp, lo + h, f)
        m[0] = self._cell0(h)
        return m

    def _cell0(self, h):
        out = np.full(4, np.nan)
        top = min(h, self.support) if self.support is not None else h
        for p in range(4):
            alpha = p - 1 - self.gamma
            bern = lambda s, p=p: comb(3, p) * (s / h) ** p * (1 - s / h) ** (3 - p)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                if self.finite:
                    val = integrate.quad(lambda s: float(self.rho(np.array([s]))[0]) * bern(s), 0, top,
                                         epsabs=0, epsrel=1e-13, limit=200)[0]
                elif alpha > -1:
                    def g(s, p=p, alpha=alpha):
                        s = max(s, 1e-14 * h)   # the endpoint value is the continuous limit
                        return float(self.rho(np.array([s]))[0]) * bern(s) / s**alpha
                    val = integrate.quad(g, 0, top, weight="alg", wvar=(alpha, 0),
                                         epsabs=0, epsrel=1e-13, limit=200)[0]
                else:
                    continue
            out[p] = max(val, 0.0)
        return out

    def khat(self, r: float) -> float:
        return self._tail_quad(lambda s: 1.0, r)

    def ktilde(self, r: float) -> float:
        return self._tail_quad(lambda s: s - r, r)

    def _tail_quad(self, weight, r):
        end = self.support if self.support is not None else np.inf
        if r >= end:
            return 0.0
        f = lambda s: float(self.rho(np.array([s]))[0]) * weight(s)
        pts = [p for p in (1.0, 2.0, 8.0) if r < p < end]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if np.isfinite(end):
                return integrate.quad(f, r, end, points=pts or None, limit=400, epsabs=1e-15, epsrel=1e-12)[0]
            total, knots = 0.0, [r] + pts
            for lo, hi in zip(knots, knots[1:]):
                total += integrate.quad(f, lo, hi, limit=400, epsabs=1e-15, epsrel=1e-12)[0]
            return total + integrate.quad(f, knots[-1], np.inf, limit=400, epsabs=1e-15, epsrel=1e-12)[0]

    def ktilde_at(self, r, Z: float) -> np.ndarray:
        """k-tilde at many radii at once by cumulative panel integration up to Z."""
        r = np.asarray(r, dtype=float)
        end = min(Z, self.support) if self.support is not None else Z
        knots = np.unique(np.concatenate([r[r < end], np.arange(np.ceil(r.min()), end), [end]]))
        knots = knots[knots > 0]
        a, b = knots[:-1], knots[1:]
        s = a[:, None] + 0.5 * (b - a)[:, None] * (_GL_X[None, :] + 1)
        rs = self.rho(s)
        i0 = 0.5 * (b - a) * (rs @ _GL_W)
        i1 = 0.5 * (b - a) * ((rs * s) @ _GL_W)
        g0 = np.concatenate([np.cumsum(i0[::-1])[::-1], [0.0]])
        g1 = np.concatenate([np.cumsum(i1[::-1])[::-1], [0.0]])
        pos = np.searchsorted(knots, r)
        out = np.where(r < end, g1[np.minimum(pos, len(g1) - 1)] - r * g0[np.minimum(pos, len(g0) - 1)], 0.0)
        return np.maximum(out, 0.0)

    def panel_rule(self, lo: float, hi: float):
        """Composite Gauss-Legendre on [lo, hi] with unit panels and breakpoints."""
        if hi <= lo:
            return np.zeros(0), np.zeros(0)
        knots = np.unique(np.concatenate([[lo, hi], np.arange(np.ceil(lo), hi),
                                          [b for b in self.breakpoints() if lo < b < hi]]))
        a, b = knots[:-1], knots[1:]
        s = a[:, None] + 0.5 * (b - a)[:, None] * (_GL_X[None, :] + 1)
        w = 0.5 * (b - a)[:, None] * _GL_W[None, :]
        return s.ravel(), w.ravel()


# ------------------------------------------------------------ tables

@dataclass(frozen=True)
class WeightTable:
    """Lattice weights w[n], n = 0..n_max, on step h for one ray."""
    h: float
    weights: np.ndarray
    n_max: int
    tail_bound: float
    order: str                     # "single" or "double"
    label: str = ""

    @property
    def z(self) -> np.ndarray:
        return self.h * np.arange(self.n_max + 1)

    def differences(self) -> np.ndarray:
        return self.weights[:-1] - self.weights[1:]

    def second_differences(self) -> np.ndarray:
        w = self.weights
        return w[:-2] - 2 * w[1:-1] + w[2:]

    def rows(self):
        return [(n, zn, wn) for n, zn, wn in zip(range(self.n_max + 1), self.z, self.weights)]


@dataclass(frozen=True)
class RayScheme:
    """Positive coefficients along one ray: the stencil adds
    coef[k] * (phi(x + eta(r_k y)) - phi(x)) for offsets r_k (r_k may be < 0)."""
    direction: np.ndarray
    sphere_weight: float
    offsets: np.ndarray
    coefs: np.ndarray
    blend: float = 0.0

    @property
    def mass(self) -> float:
        return float(self.sphere_weight * self.coefs.sum())


def _ray_coefficients_single(m, h):
    """c_n = k_{n-1} - k_n = int rho * tent_n, n = 1..ncells-1."""
    n = m.shape[0]
    up = np.where(UP > 0, m[:-1] * UP, 0.0).sum(axis=1)       # cell n-1
    down = np.where(DOWN > 0, m[1:] * DOWN, 0.0).sum(axis=1)  # cell n
    c = h * (up + down)
    return np.concatenate([[0.0], c])  # index n, c[0] unused


def _combine(m, rows, bern):
    return np.where(bern > 0, m[rows] * bern, 0.0).sum(axis=-1)


def _ray_coefficients_double(m, h):
    """Returns (d, c, W0, W1, W2, V0) for one ray on step h.

    d[i]: quadratic B-spline integrals (cell-average weights, i >= 1)
    c[i]: cubic B-spline integrals (hat-lumped weights, i >= 2), c[1] from W.
    """
    n = m.shape[0]
    mm = np.vstack([m, np.zeros((3, 4))])
    idx = np.arange(1, n)
    d = np.zeros(n)
    d[1:] = h**2 * sum(_combine(mm, idx - 1 + k, QUAD[k]) for k in range(3))
    c = np.zeros(n)
    idx2 = np.arange(2, n)
    c[2:] = h**2 * sum(_combine(mm, idx2 - 2 + k, CUBIC[k]) for k in range(4))
    j = np.arange(n)
    body = np.nan_to_num(m)
    # W0: half hat; cells j >= 1 carry u/2 - 1/6 with u = j + v
    lin = lambda shift: (j[:, None] - shift) + LIN[None, :]
    W0 = h**2 * (_combine(m, [0], HALF_HAT0)[0]
                 + (body[1:] * (0.5 * (j[1:, None] + LIN[None, :]) - 1.0 / 6)).sum())
    W1 = h**2 * (_combine(m, [0], RAMP_HAT[0])[0] + _combine(m, [1], RAMP_HAT[1])[0]
                 + (body[2:] * lin(1)[2:]).sum())
    W2 = h**2 * (_combine(m, [1], RAMP_HAT[0])[0] + _combine(m, [2], RAMP_HAT[1])[0]
                 + (body[3:] * lin(2)[3:]).sum())
    c[1] = W0 - 2 * W1 + W2
    V0 = float(np.sum(np.arange(n) * d))
    return d, c, W0, W1, W2, V0


def _single_table(c, h, tail, label):
    k = np.concatenate([np.cumsum(c[1:][::-1])[::-1], [0.0]])   # k_n = sum_{m > n} c_m
    return WeightTable(h, k, len(k) - 1, tail, "single", label)


def _double_table(d, h, tail, label):
    e = np.concatenate([[0.0], np.cumsum(d[1:][::-1])[::-1]])   # e_n = sum_{m >= n} d_m, n >= 1
    V = np.concatenate([np.cumsum(e[1:][::-1])[::-1], [0.0]])   # V_n = sum_{m > n} e_m
    return WeightTable(h, V, len(V) - 1, tail, "double", label)


def _ray_tail(kern: LevyKernel, y) -> RadialTail:
    return RadialTail(kern.radial(y), kern.gamma, kern.decay, kern.bound_K,
                      kern.support_radius, kern.kind == "finite")


def _check_order(kern, order):
    est = estimate_singularity(kern)
    limit = 1.0 if order == "single" else 2.0
    if est >= limit - 1e-3:
        raise KernelError(f"estimated singularity order {est:.3f}: integrated tail mass diverges")
    if kern.kind == "finite" and est >= -1e-2:
        raise KernelError(f"kernel declared finite but estimated singularity order is {est:.3f}")
    return est


def _single_ray(tail: RadialTail, h, trunc_tol, y, wy, label):
    Z = tail.radius(trunc_tol, 1)
    ncells = int(np.ceil(Z / h)) + 3
    if ncells > MAX_CELLS:
        raise ConfigurationError("truncation radius needs too many cells")
    m = tail.moments(h, ncells)
    c = _ray_coefficients_single(m, h)
    bound = max(tail.tail_bounds(Z)[:2])
    table = _single_table(c, h, bound, label)
    scheme = RayScheme(np.asarray(y, dtype=float), float(wy), h * np.arange(1, ncells), c[1:] / h)
    return table, scheme, Z


@dataclass
class _DoubleRay:
    y: np.ndarray
    w: float
    h: float
    d: np.ndarray           # cell-average coefficients, index i >= 1
    c: np.ndarray           # hat-lumped coefficients, index i >= 1
    W0: float
    V0: float
    table: WeightTable
    Z: float


def _double_ray(tail: RadialTail, h, trunc_tol, y, wy, label) -> _DoubleRay:
    Z = tail.radius(trunc_tol, 2)
    ncells = int(np.ceil(Z / h)) + 4
    if ncells > MAX_CELLS:
        raise ConfigurationError("truncation radius needs too many cells")
    m = tail.moments(h, ncells)
    d, c, W0, W1, W2, V0 = _ray_coefficients_double(m, h)
    table = _double_table(d, h, max(tail.tail_bounds(Z)), label)
    return _DoubleRay(np.asarray(y, dtype=float), float(wy), h, d, c, W0, V0, table, Z)


def _double_schemes(rays, mode="lumped"):
    """Summation by parts of sum_n W_n Delta_zz psi(n h) along each ray.

    The leading weight W_0 of a ray multiplies psi(-h y), which is the same
    jump target as the first lattice point of the opposite ray. Coefficients
    of coinciding targets are merged before the sign check; if a merged
    coefficient is still negative the pair is blended with the cell-average
    weights (whose coefficients are all non-negative) just enough to fix it.
    """
    dirs = np.array([r.y for r in rays])
    partner = []
    for k, r in enumerate(rays):
        hit = np.nonzero(np.all(np.abs(dirs + r.y) < 1e-12, axis=1))[0]
        j = int(hit[0]) if len(hit) and abs(rays[hit[0]].w - r.w) <= 1e-14 * r.w else -1
        partner.append(j)
    tau = np.full(len(rays), 1.0 if mode == "cell" else 0.0)
    if mode != "cell":
        for k, r in enumerate(rays):
            j = partner[k]
            lead_l = rays[j].W0 if j >= 0 else 0.0
            lead_c = rays[j].V0 if j >= 0 else 0.0
            if j < 0:
                lead_l, lead_c = 0.0, 0.0
            A = r.c[1] + lead_l
            B = r.d[1] + lead_c
            if A < 0:
                t = A / (A - B)
                tau[k] = max(tau[k], t)
                if j >= 0:
                    tau[j] = max(tau[j], t)
    schemes = []
    for k, r in enumerate(rays):
        t = tau[k]
        coef = (1 - t) * r.c + t * r.d
        j = partner[k]
        offsets = r.h * np.arange(1, len(coef))
        coefs = coef[1:].copy()
        if j >= 0:
            tj = tau[j]
            coefs[0] += (1 - tj) * rays[j].W0 + tj * rays[j].V0
            extra_off, extra = np.zeros(0), np.zeros(0)
        else:
            extra_off, extra = np.array([-r.h]), np.array([(1 - t) * r.W0 + t * r.V0])
        coefs[0] = max(coefs[0], 0.0)
        schemes.append(RayScheme(r.y, r.w, np.concatenate([extra_off, offsets]),
                                 np.concatenate([extra, coefs]) / r.h**2, float(t)))
    return schemes


# -------------------------------------------------------- public builders

@dataclass
class TailKernel1D:
    kernel: LevyKernel
    tails: tuple                    # (RadialTail +, RadialTail -)
    schemes: tuple                  # RayScheme per side
    radius: float
    total_mass: float
    mass_pos: float
    mass_neg: float

    def khat(self, z: float) -> float:
        return self.tails[0].khat(z) if z > 0 else self.tails[1].khat(-z)


@dataclass
class DoubleTailKernel1D:
    kernel: LevyKernel
    tails: tuple
    schemes: tuple
    radius: float
    dz: float
    total_mass: float
    mass_pos: float
    mass_neg: float
    lumped: tuple = ()              # (W0, V0) per side

    def ktilde(self, z: float) -> float:
        return self.tails[0].ktilde(z) if z > 0 else self.tails[1].ktilde(-z)


@dataclass
class PolarTailKernel:
    kernel: LevyKernel
    order: str
    directions: np.ndarray
    sphere_weights: np.ndarray
    tails: list
    schemes: list
    radial_mass: np.ndarray
    radius: float
    dz: float
    sphere_error: float = 0.0

    def khat(self, r, k):
        return self.tails[k].khat(r)

    def ktilde(self, r, k):
        return self.tails[k].ktilde(r)


def default_dz(dx: float) -> float:
    """Double-tail lattice step: the multiple of dx closest to sqrt(dx)."""
    return max(1, round(dx ** -0.5)) * dx


def snap_dz(dx: float, dz: float | None) -> float:
    if dz is None:
        return default_dz(dx)
    return max(1, round(dz / dx)) * dx


def build_single_tail(kern: LevyKernel, dx: float, trunc_tol: float = 1e-10):
    if kern.dim != 1:
        raise ConfigurationError("build_single_tail is one-dimensional; use build_polar_tails")
    if kern.kind == "singular_gamma_ge_1":
        raise ConfigurationError("single tail needs gamma < 1 or a finite measure")
    _check_order(kern, "single")
    dirs, w = sphere_rule(1)
    tables, schemes, tails, Z = [], [], [], 0.0
    for y, wy, lab in zip(dirs, w, ("+", "-")):
        tail = _ray_tail(kern, y)
        tab, sch, Zr = _single_ray(tail, dx, trunc_tol, y, wy, lab)
        tables.append(tab)
        schemes.append(sch)
        tails.append(tail)
        Z = max(Z, Zr)
    mp, mn = (float(t.weights.sum()) for t in tables)
    return TailKernel1D(kern, tuple(tails), tuple(schemes), Z, mp + mn, mp, mn), tuple(tables)


def build_double_tail(kern: LevyKernel, dx: float, trunc_tol: float = 1e-10, dz=None, mode="lumped"):
    if kern.dim != 1:
        raise ConfigurationError("build_double_tail is one-dimensional; use build_polar_tails")
    if kern.kind != "singular_gamma_ge_1":
        raise ConfigurationError("double tail needs kind singular_gamma_ge_1")
    _check_order(kern, "double")
    h = snap_dz(dx, dz)
    dirs, w = sphere_rule(1)
    tails = [_ray_tail(kern, y) for y in dirs]
    rays = [_double_ray(t, h, trunc_tol, y, wy, lab) for t, y, wy, lab in zip(tails, dirs, w, ("+", "-"))]
    schemes = _double_schemes(rays, mode)
    tables = tuple(r.table for r in rays)
    mp, mn = (float(t.weights.sum()) for t in tables)
    Z = max(r.Z for r in rays)
    return (DoubleTailKernel1D(kern, tuple(tails), tuple(schemes), Z, h, mp + mn, mp, mn,
                               tuple((r.W0, r.V0) for r in rays)), tables)


def build_polar_tails(kern: LevyKernel, dx: float, sphere_nodes: int = 32, order: str = "single",
                      trunc_tol: float = 1e-10, dz=None, rule=None, mode="lumped"):
    M = kern.dim
    if M < 2:
        raise ConfigurationError("polar tails need M >= 2")
    want = "double" if kern.kind == "singular_gamma_ge_1" else "single"
    if order != want:
        raise ConfigurationError(f"order {order!r} does not match kernel kind {kern.kind}")
    _check_order(kern, order)
    dirs, w = sphere_rule(M, sphere_nodes, rule)
    h = dx if order == "single" else snap_dz(dx, dz)
    tails = [_ray_tail(kern, y) for y in dirs]
    if order == "single":
        out = [_single_ray(t, h, trunc_tol, y, wy, f"dir{k}") for k, (t, y, wy) in enumerate(zip(tails, dirs, w))]
        tables, schemes, Z = [o[0] for o in out], [o[1] for o in out], max(o[2] for o in out)
    else:
        rays = [_double_ray(t, h, trunc_tol, y, wy, f"dir{k}") for k, (t, y, wy) in enumerate(zip(tails, dirs, w))]
        tables, schemes, Z = [r.table for r in rays], _double_schemes(rays, mode), max(r.Z for r in rays)
    mass = [float(t.weights.sum()) for t in tables]
    err = abs(w.sum() - sphere_area(M)) / sphere_area(M)
    return (PolarTailKernel(kern, order, dirs, w, tails, schemes, np.array(mass), Z, h, err), tables)


def build_finite(kern: LevyKernel, dx: float, trunc_tol: float = 1e-10, dz=None, sphere_nodes=32, rule=None):
    """Hat-lumped positive quadrature of a finite measure on the lattice n dz
    along each ray (the r = 0 node drops out of the difference form)."""
    if kern.kind != "finite":
        raise ConfigurationError("build_finite needs a finite measure")
    _check_order(kern, "single")
    h = dx if dz is None else float(dz)
    dirs, w = sphere_rule(kern.dim, sphere_nodes, rule)
    schemes, tails, Z = [], [], 0.0
    for y, wy in zip(dirs, w):
        tail = _ray_tail(kern, y)
        _, sch, Zr = _single_ray(tail, h, trunc_tol, y, wy, "")
        schemes.append(sch)
        tails.append(tail)
        Z = max(Z, Zr)
    return schemes, tails, Z


def quadrature_schemes(nodes, weights):
    """User-supplied positive rule sum_k w_k (phi(x + eta(z_k)) - phi(x))."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    weights = np.asarray(weights, dtype=float).ravel()
    if np.any(weights < 0):
        raise ConfigurationError("quadrature weights must be non-negative")
    r = np.linalg.norm(nodes, axis=1)
    keep = r > 0
    return [RayScheme(nodes[k] / r[k], 1.0, np.array([r[k]]), np.array([weights[k]]))
            for k in np.nonzero(keep)[0]]


# ------------------------------------------------------- drift corrections

def graded_rule(top: float, beta: float, levels: int = 20, n_inner: int = 20):
    """Nodes and weights for int_0^top F(r) dr where F ~ r^beta near 0:
    dyadic shells towards 0 with Gauss-Legendre, Gauss-Jacobi on the last."""
    rs, ws = [], []
    for j in range(levels):
        a, b = top * 2.0 ** (-j - 1), top * 2.0 ** (-j)
        rs.append(0.5 * (b - a) * _GL_X + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * _GL_W)
    inner = top * 2.0 ** (-levels)
    x, w = special.roots_jacobi(n_inner, 0.0, beta)
    u = 0.5 * (x + 1)
    r = inner * u
    rs.append(r)
    ws.append(w * 0.5 ** (1 + beta) * inner ** (1 + beta) * r ** (-beta))
    return np.concatenate(rs), np.concatenate(ws)


def _ray_sum(p, alpha, t, X, y, r, fac, second=False, delta=1e-3, chunk=200_000):
    """sum_k fac[k] * eta(t, x, r_k y) (or its second r-derivative) for all x."""
    keep = fac != 0
    r, fac = r[keep], fac[keep]
    n, N = X.shape
    total = np.zeros((n, p.dim_x))
    if not len(r):
        return total
    y = np.asarray(y, dtype=float)
    step = max(1, chunk // max(n, 1))
    shifts = (-2, -1, 0, 1, 2) if second else (0,)
    stencil = np.array([-1, 16, -30, 16, -1]) / (12 * delta**2) if second else np.ones(1)
    for lo in range(0, len(r), step):
        rr, ff = r[lo:lo + step], fac[lo:lo + step]
        k = len(rr)
        Xr = np.repeat(X, k, axis=0)
        acc = np.zeros((n * k, N))
        for sh, cw in zip(shifts, stencil):
            Z = np.tile((rr + sh * delta)[:, None] * y[None, :], (n, 1))
            acc += cw * p.eval("jump", alpha, t, Xr, Z)
        total += (acc.reshape(n, k, N) * ff[None, :, None]).sum(axis=1)
    return total


def _check_rule(a, b, tol, what):
    err = float(np.max(np.abs(a - b))) if np.size(a) else 0.0
    scale = max(1.0, float(np.max(np.abs(b))) if np.size(b) else 1.0)
    if err > max(tol * 1e3, 1e-7) * scale:
        raise KernelError(f"{what}: quadrature did not converge (difference {err:.2e})")


def drift_correction_bbar(kern: LevyKernel, p: ControlProblem, alpha: int, t: float, X,
                          tol: float = 1e-10, sphere_nodes: int = 32, rule=None) -> np.ndarray:
    """int_{0<|z|<1} eta(t, x, z) k(z) dz for every row of X, shape (n, N)."""
    if kern.kind == "singular_gamma_ge_1":
        raise ConfigurationError("bbar needs a finite measure or gamma < 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = 0.0 if kern.kind == "finite" else -kern.gamma
    out = []
    for levels in (24, 36):
        total = np.zeros((len(X), p.dim_x))
        for y, wy in zip(*sphere_rule(kern.dim, sphere_nodes, rule)):
            tail = _ray_tail(kern, y)
            top = min(1.0, tail.support) if tail.support is not None else 1.0
            r, w = graded_rule(top, beta, levels)
            total += wy * _ray_sum(p, alpha, t, X, y, r, w * tail.rho(r))
        out.append(total)
    _check_rule(out[0], out[1], tol, "bbar")
    return out[1]


def drift_correction_btilde(kern: LevyKernel, p: ControlProblem, alpha: int, t: float, X,
                            tol: float = 1e-10, sphere_nodes: int = 32, rule=None) -> np.ndarray:
    """int_0^inf d^2/dr^2 eta(t, x, r y) ktilde(r, y) dr, summed over directions."""
    if kern.kind != "singular_gamma_ge_1":
        raise ConfigurationError("btilde needs kind singular_gamma_ge_1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = 1.0 - kern.gamma
    out = []
    for levels in (24, 36):
        total = np.zeros((len(X), p.dim_x))
        for y, wy in zip(*sphere_rule(kern.dim, sphere_nodes, rule)):
            tail = _ray_tail(kern, y)
            Z = tail.radius(tol, 2)
            top = min(1.0, Z)
            r0, w0 = graded_rule(top, beta, levels)
            r1, w1 = tail.panel_rule(top, Z)
            r, w = np.concatenate([r0, r1]), np.concatenate([w0, w1])
            total += wy * _ray_sum(p, alpha, t, X, y, r, w * tail.ktilde_at(r, Z), second=True)
        out.append(total)
    _check_rule(out[0], out[1], tol, "btilde")
    return out[1]


def far_moment(kern: LevyKernel, p: ControlProblem, alpha: int, t: float, X,
               tol: float = 1e-10, sphere_nodes: int = 32, rule=None) -> np.ndarray:
    """int_{|z|>1} eta(t, x, z) k(z) dz, shape (n, N)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros((len(X), p.dim_x))
    for y, wy in zip(*sphere_rule(kern.dim, sphere_nodes, rule)):
        tail = _ray_tail(kern, y)
        r, w = tail.panel_rule(1.0, tail.radius(tol, 0))
        total += wy * _ray_sum(p, alpha, t, X, y, r, w * tail.rho(r))
    return total

"""Problem data: control set, coefficient functions, Levy kernel, and
sampling-based falsification of the standing assumptions.

All coefficient callables are vectorised over points:

    sigma(t, X)    -> (n, N, P)
    drift(t, X)    -> (n, N)
    discount(t, X) -> (n,)
    source(t, X)   -> (n,)
    jump(t, X, Z)  -> (n, N)     X is (n, N), Z is (n, M)
    initial(X)     -> (n,)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

KINDS = ("finite", "singular_gamma_lt_1", "singular_gamma_ge_1")
_COEFFS = ("sigma", "drift", "discount", "source", "jump")


def _per_control(value, m, name):
    if callable(value):
        return (value,) * m
    value = tuple(value)
    if len(value) != m or not all(callable(v) for v in value):
        raise ConfigurationError(f"{name}: need one callable or {m} callables")
    return value


@dataclass(frozen=True)
class ControlProblem:
    controls: tuple
    sigma: tuple
    drift: tuple
    discount: tuple
    source: tuple
    jump: tuple
    initial: Callable
    horizon: float
    dim_x: int = 1
    dim_z: int = 1
    time_dependent: bool = False

    def __post_init__(self):
        controls = tuple(self.controls)
        if not controls:
            raise ConfigurationError("control set is empty")
        object.__setattr__(self, "controls", controls)
        for name in _COEFFS:
            object.__setattr__(self, name, _per_control(getattr(self, name), len(controls), name))
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def control_index(self, label) -> int:
        if isinstance(label, (int, np.integer)) and label not in self.controls:
            return int(label)
        return self.controls.index(label)

    # evaluation helpers wrap failures into DataError with context
    def eval(self, name: str, a: int, t: float, X, Z=None) -> np.ndarray:
        fn = getattr(self, name)[a]
        X = np.atleast_2d(np.asarray(X, dtype=float))
        try:
            out = fn(t, X) if Z is None else fn(t, X, np.atleast_2d(Z))
            out = np.asarray(out, dtype=float)
        except Exception as exc:
            raise DataError(f"{name}[{self.controls[a]}] failed at t={t}, x={X[0]}: {exc}") from exc
        n, N = X.shape
        want = {"sigma": (n, N, -1), "drift": (n, N), "jump": (n, N),
                "discount": (n,), "source": (n,)}[name]
        if name == "sigma":
            out = out.reshape(n, N, -1)
        else:
            out = np.broadcast_to(out, want).astype(float, copy=True) if out.size in (1, np.prod(want)) \
                else out.reshape(want)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out.reshape(n, -1)))[0][0]
            raise DataError(f"{name}[{self.controls[a]}] is not finite at t={t}, x={X[bad]}")
        return out

    def diffusion(self, a: int, t: float, X) -> np.ndarray:
        s = self.eval("sigma", a, t, X)
        return 0.5 * np.einsum("nip,njp->nij", s, s)

    def g(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        try:
            out = np.asarray(self.initial(X), dtype=float).reshape(len(X))
        except Exception as exc:
            raise DataError(f"initial datum failed at x={X[0]}: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise DataError("initial datum is not finite")
        return out


@dataclass(frozen=True)
class LevyKernel:
    """Density of the Levy measure together with its decay envelope
    k(z) <= bound_K exp(-(decay_lambda + decay_eps)|z|) / |z|^(M + gamma)."""
    density: Callable
    gamma: float
    decay_lambda: float
    decay_eps: float
    bound_K: float
    kind: str
    dim: int = 1
    support_radius: float | None = None
    symmetric: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if not 0 <= self.gamma < 2:
            raise ConfigurationError("gamma must lie in [0, 2)")
        if self.kind == "singular_gamma_lt_1" and not self.gamma < 1:
            raise ConfigurationError("kind singular_gamma_lt_1 needs gamma < 1")
        if self.kind == "singular_gamma_ge_1" and not self.gamma >= 1:
            raise ConfigurationError("kind singular_gamma_ge_1 needs gamma in [1, 2)")
        if self.decay_eps <= 0 or self.bound_K <= 0 or self.decay_lambda < 0:
            raise ConfigurationError("envelope constants must be positive")

    @property
    def decay(self) -> float:
        return self.decay_lambda + self.decay_eps

    def __call__(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        Z2 = Z.reshape(-1, self.dim)
        out = np.asarray(self.density(Z2), dtype=float).reshape(len(Z2))
        return out.reshape(Z.shape[:-1]) if Z.ndim > 1 or self.dim > 1 else out.reshape(Z.shape)

    def envelope(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.dim)
        r = np.linalg.norm(Z, axis=1)
        with np.errstate(divide="ignore"):
            return self.bound_K * np.exp(-self.decay * r) / r ** (self.dim + self.gamma)

    def radial(self, direction) -> Callable:
        """rho(s) = k(s y) s^(M-1) along the unit vector y, s > 0."""
        y = np.asarray(direction, dtype=float).reshape(self.dim)
        M = self.dim

        def rho(s):
            s = np.asarray(s, dtype=float)
            flat = s.reshape(-1)
            vals = np.asarray(self.density(flat[:, None] * y[None, :]), dtype=float).reshape(-1)
            if M > 1:
                vals = vals * flat ** (M - 1)
            return vals.reshape(s.shape)
        return rho


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class SamplingPlan:
    times: Sequence[float]
    xs: np.ndarray                # (n, N)
    zs: np.ndarray                # (m, M), nonzero
    controls: Sequence[int] | None = None
    fd_step: float = 1e-3


@dataclass
class AssumptionCheck:
    name: str
    estimate: float
    cap: float
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def rows(self):
        return [(c.name, c.estimate, c.cap, c.passed, c.detail) for c in self.checks]


def _norm1(values, ts, xs):
    """sup|w| + sup |w(t,x) - w(s,y)| / (|t-s|^(1/2) + |x-y|) over probe pairs."""
    flat = values.reshape(len(ts) * len(xs), -1)
    pts = [(t, x) for t in ts for x in xs]
    sup = float(np.max(np.linalg.norm(flat, axis=1))) if flat.size else 0.0
    q = 0.0
    for i, j in combinations(range(len(pts)), 2):
        (t, x), (s, y) = pts[i], pts[j]
        d = np.sqrt(abs(t - s)) + np.linalg.norm(x - y)
        if d > 0:
            q = max(q, float(np.linalg.norm(flat[i] - flat[j])) / d)
    return sup, q


def validate_assumptions(p: ControlProblem, kern: LevyKernel | None, plan: SamplingPlan,
                         caps: dict | None = None, default_cap: float = 10.0) -> ValidationReport:
    """Falsify the standing assumptions at probe points.

    Never proves anything: each check reports a divided-difference
    estimate and compares it with a cap (``caps[name]`` or ``default_cap``).
    """
    caps = dict(caps or {})
    cap = lambda name: float(caps.get(name, default_cap))
    ts = [float(t) for t in plan.times]
    xs = np.atleast_2d(np.asarray(plan.xs, dtype=float))
    zs = np.atleast_2d(np.asarray(plan.zs, dtype=float))
    ctrl = range(p.n_controls) if plan.controls is None else [p.control_index(a) for a in plan.controls]
    lam = kern.decay_lambda if kern is not None else 0.0
    checks = []

    def add(name, est, ok, detail="", limit=None):
        limit = cap(name) if limit is None else limit
        checks.append(AssumptionCheck(name, float(est), float(limit), bool(ok), detail))

    g = p.g(xs)
    sup, q = _norm1(g[None, :], [0.0], xs)
    est = sup + q
    add("initial_norm1", est, est <= cap("initial_norm1"))

    cmin = np.inf
    for name in ("sigma", "drift", "discount", "source"):
        worst = 0.0
        for a in ctrl:
            vals = np.stack([p.eval(name, a, t, xs) for t in ts])
            sup, q = _norm1(vals, ts, xs)
            worst = max(worst, sup + q)
            if name == "discount":
                cmin = min(cmin, float(vals.min()))
        add(f"{name}_norm1", worst, worst <= cap(f"{name}_norm1"))
    add("discount_nonneg", cmin, cmin >= 0, "c >= 0 at probes", limit=0.0)

    z0 = np.zeros((len(xs), p.dim_z))
    at0 = max(float(np.abs(p.eval("jump", a, t, xs, z0)).max()) for a in ctrl for t in ts)
    add("jump_at_origin", at0, at0 <= 1e-12, "eta(t,x,0) = 0", limit=1e-12)

    growth = lip_x = lip_z = d2z = 0.0
    h = plan.fd_step
    for a in ctrl:
        for t in ts:
            for z in zs:
                Z = np.tile(z, (len(xs), 1))
                r = float(np.linalg.norm(z))
                wgt = np.exp(-lam * r)
                eta = p.eval("jump", a, t, xs, Z)
                scale = min(r, 1.0)
                growth = max(growth, float(np.linalg.norm(eta, axis=1).max()) * wgt / scale)
                for i, j in combinations(range(len(xs)), 2):
                    dx = np.linalg.norm(xs[i] - xs[j])
                    if dx > 0:
                        lip_x = max(lip_x, np.linalg.norm(eta[i] - eta[j]) * wgt / (dx * scale))
                for k in range(p.dim_z):
                    e = np.zeros(p.dim_z)
                    e[k] = h
                    up = p.eval("jump", a, t, xs, Z + e)
                    dn = p.eval("jump", a, t, xs, Z - e)
                    lip_z = max(lip_z, float(np.linalg.norm(up - dn, axis=1).max()) * wgt / (2 * h))
                    d2z = max(d2z, float(np.linalg.norm(up - 2 * eta + dn, axis=1).max()) * wgt / h**2)
    add("jump_growth", growth, growth <= cap("jump_growth"), "|eta| <= K (|z|^1) e^(Lambda|z|)")
    add("jump_lipschitz_x", lip_x, lip_x <= cap("jump_lipschitz_x"))
    add("jump_lipschitz_z", lip_z, lip_z <= cap("jump_lipschitz_z"))
    add("jump_d2z", d2z, d2z <= cap("jump_d2z"), "finite-difference second z-derivative")

    if kern is not None:
        if kern.dim != p.dim_z:
            raise ConfigurationError("kernel dimension differs from problem dim_z")
        try:
            kv = kern(zs)
        except Exception as exc:
            raise DataError(f"kernel density failed at probes: {exc}") from exc
        env = kern.envelope(zs)
        ratio = float(np.max(kv / env)) if len(zs) else 0.0
        add("kernel_envelope", ratio, ratio <= 1.0 + 1e-12, "k(z) / envelope(z)", limit=1.0)
        add("kernel_nonneg", float(kv.min()) if len(kv) else 0.0, bool(np.all(kv >= 0)), limit=0.0)
        gam = estimate_singularity(kern)
        if kern.kind == "finite":
            ok = gam < -1e-2
        elif kern.kind == "singular_gamma_lt_1":
            ok = gam < 1 - 1e-3
        else:
            ok = gam < 2 - 1e-3
        add("kernel_kind", gam, ok and gam <= kern.gamma + 0.05, f"estimated order {gam:.3f}, kind {kern.kind}", limit=kern.gamma)
    return ValidationReport(checks)


def estimate_singularity(kern: LevyKernel, j0: int = 30, n_dirs: int = 8) -> float:
    """Estimate the order of the singularity at 0 from the mass of dyadic
    shells: mass(shell_j) ~ 2^(j * order). Bounded densities give about -1."""
    from .kernels import sphere_rule  # local import, kernels imports problem
    dirs, w = sphere_rule(kern.dim, n_dirs)
    x, gw = np.polynomial.legendre.leggauss(16)
    masses = []
    for j in (j0, j0 + 1):
        a, b = 2.0 ** (-j - 1), 2.0 ** (-j)
        s = 0.5 * (b - a) * x + 0.5 * (a + b)
        m = 0.0
        for y, wy in zip(dirs, w):
            m += wy * 0.5 * (b - a) * float(np.dot(gw, kern.radial(y)(s)))
        masses.append(m)
    if masses[0] <= 0:
        return -np.inf
    return float(np.log2(masses[1] / masses[0]))

"""The gated property checks, one function per criterion.

Each returns a CriterionResult; ``run_all`` drives them for the CLI
``verify`` command and the acceptance tests.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels as kn
from .harness import TWO_PI, estimate_order, oracle_J, rate_report
from .lattice import Farfield, Grid
from .local import build_L
from .models import builtin_kernels, linear_problem, tempered_stable, finite_exp, two_control_problem
from .nonlocal_ops import JumpDiscretization
from .stepper import (BellmanScheme, SchemeConfig, discrete_comparison_check, explicit_part,
                      implicit_system, relaxation_map)
from .switching import SwitchingProblem, solve_switching, switching_gap_study

DX_FAMILY = [2.0 ** -j for j in range(3, 8)]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return (f"criterion {self.number} [{self.name}]: {'PASS' if self.passed else 'FAIL'} "
                f"({self.detail}; {self.seconds:.1f}s)")


def _timed(number, name):
    def wrap(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            ok, detail = fn(*args, **kw)
            return CriterionResult(number, name, bool(ok), detail, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def _center_grid(dim, dx, half=1.0):
    return Grid.box([(-half, half)] * dim, dx)


def _center(grid):
    return int(grid.flat_index(np.zeros(grid.dim, dtype=np.int64)))


# ---------------------------------------------------------------- 1

def _tables(kern, dx):
    """Weight tables of a kernel at dx (empty list for finite measures)."""
    if kern.kind == "finite":
        return []
    if kern.dim == 1:
        build = kn.build_single_tail if kern.kind == "singular_gamma_lt_1" else kn.build_double_tail
        return list(build(kern, dx)[1])
    order = "single" if kern.kind == "singular_gamma_lt_1" else "double"
    return list(kn.build_polar_tails(kern, dx, order=order)[1])


@_timed(1, "weight positivity and structure")
def weight_structure():
    worst, bad = 0.0, []
    for name, kern in builtin_kernels().items():
        p = linear_problem(a=0.5, b=0.7, dim=kern.dim)
        for dx in DX_FAMILY:
            grid = _center_grid(kern.dim, dx)
            node = _center(grid)
            ff = Farfield.initial(p.g)
            jd = JumpDiscretization(kern, grid)
            J = jd.assemble(p, 0, 0.0, ff, nodes=[node])
            L = build_L(p, 0, 0.0, grid, ff, nodes=[node])
            coefs = [s.coefs.min() for s in jd.schemes if len(s.coefs)]
            w = min([J.min_weight(), L.min_weight()] + coefs)
            worst = min(worst, w)
            if w < 0:
                bad.append(f"{name}@{dx:g}: weight {w:.2e}")
            for tab in _tables(kern, dx):
                scale = max(1.0, float(tab.weights[0]))
                if tab.order == "single":
                    d = tab.differences()
                    if d.size and d.min() < -1e-14 * scale:
                        bad.append(f"{name}@{dx:g}: table increases ({d.min():.2e})")
                else:
                    d2 = tab.second_differences()
                    if d2.size and d2.min() < -1e-14 * scale:
                        bad.append(f"{name}@{dx:g}: table not convex ({d2.min():.2e})")
    return not bad, ("; ".join(bad[:3]) if bad else f"min weight {worst:.3g}, all tables monotone/convex")


# ---------------------------------------------------------------- 2

def mass_ratios(kern, family=DX_FAMILY):
    """diag_mass * dx of the jump stencil at the centre node along the family."""
    p = linear_problem(a=0.0, b=0.0, dim=kern.dim)
    out = []
    for dx in family:
        grid = _center_grid(kern.dim, dx)
        node = _center(grid)
        st = JumpDiscretization(kern, grid).stencil(p, 0, 0.0, node, Farfield.initial(p.g))
        out.append(st.diag_mass * dx)
    return np.array(out)


def local_mass_ratios(a, dim=1, family=DX_FAMILY):
    """l * dx^2 of the diffusion part at the centre node."""
    p = linear_problem(a=a, b=0.0, dim=dim)
    out = []
    for dx in family:
        grid = _center_grid(dim, dx)
        node = _center(grid)
        out.append(build_L(p, 0, 0.0, grid, Farfield.initial(p.g), nodes=[node]).nominal[node] * dx**2)
    return np.array(out)


def bounded_family(vals, limit=1.5) -> bool:
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)) or vals[0] <= 0:
        return False
    return bool(vals[-1] / vals[0] <= limit and vals.max() / vals[0] <= limit)


@_timed(2, "mass bounds")
def mass_bounds(extra_kernels=()):
    bad, worst = [], 0.0
    kernels = list(builtin_kernels().items()) + list(extra_kernels)
    for name, kern in kernels:
        r = mass_ratios(kern)
        worst = max(worst, r[-1] / r[0])
        if not bounded_family(r):
            bad.append(f"{name}: {np.round(r, 4).tolist()}")
    for a, dim in ((0.5, 1), (0.1, 1), (0.5, 2)):
        r = local_mass_ratios(a, dim)
        worst = max(worst, r[-1] / r[0])
        if not bounded_family(r):
            bad.append(f"local a={a}: {np.round(r, 4).tolist()}")
    return not bad, ("; ".join(bad[:3]) if bad else f"max finest/coarsest ratio {worst:.3f}")


# ---------------------------------------------------------------- 3

def jump_consistency(kern, levels, tol=1e-10, x0=0.3):
    """(dx, |J_h cos - oracle|) at the node nearest x0, farfield = exact phi."""
    p = linear_problem(a=0.0, b=0.0, dim=kern.dim)
    phi = lambda X: np.cos(np.atleast_2d(X).sum(axis=1))
    out = []
    for n in levels:
        dx = TWO_PI / n
        grid = Grid.box([(-math.pi, math.pi)] * kern.dim, dx)
        idx = np.full(kern.dim, int(round(x0 / dx)), dtype=np.int64)
        node = int(grid.flat_index(idx))
        x = idx * dx
        ff = Farfield.initial(phi)
        op = JumpDiscretization(kern, grid, trunc_tol=tol).assemble(p, 0, 0.0, ff, nodes=[node])
        val = op.apply(phi(grid.points()), 0.0, ff)[node]
        ref = oracle_J(kern, p, 0, 0.0, x, phi, tol, grad=lambda y: -np.sin(y.sum()) * np.ones(len(y)))
        out.append((dx, abs(val - ref)))
    return out


def local_consistency(levels, a=0.5, b=0.3, x0=0.3):
    p = linear_problem(a=a, b=b)
    out = []
    for n in levels:
        dx = TWO_PI / n
        grid = Grid.box([(-math.pi, math.pi)], dx)
        i = int(round(x0 / dx))
        node = int(grid.flat_index([i]))
        x = i * dx
        op = build_L(p, 0, 0.0, grid, Farfield.initial(p.g), nodes=[node])
        val = op.apply(np.cos(grid.points()[:, 0]), 0.0, Farfield.initial(p.g))[node]
        out.append((dx, abs(val - (-a * math.cos(x) - b * math.sin(x)))))
    return out


CONSISTENCY_CASES = [
    ("finite_exp (gamma 0)", finite_exp(), [32, 64, 128]),
    ("tempered gamma 0", tempered_stable(gamma=0.0), [32, 64, 128]),
    ("tempered gamma 0.5", tempered_stable(gamma=0.5), [32, 64, 128]),
    ("tempered gamma 0.5 skew", tempered_stable(gamma=0.5, skew=0.5), [32, 64, 128]),
    ("tempered gamma 1.5", tempered_stable(gamma=1.5), [64, 256, 1024]),
    ("tempered gamma 1.5 skew", tempered_stable(gamma=1.5, lam=2.0, skew=0.5), [64, 256, 1024]),
]


@_timed(3, "consistency against the quadrature oracle")
def consistency():
    parts, ok = [], True
    for name, kern, levels in CONSISTENCY_CASES:
        fit = estimate_order(jump_consistency(kern, levels))
        ok &= fit.slope >= 0.8
        parts.append(f"{name}: {fit.slope:.2f}")
    fit = estimate_order(local_consistency([64, 128, 256]))
    ok &= fit.slope >= 0.9
    parts.append(f"local: {fit.slope:.2f}")
    return ok, ", ".join(parts)


# ---------------------------------------------------------------- 4

@_timed(4, "discrete comparison")
def comparison(trials=100, seed=20240607, tol=1e-10):
    rng = np.random.default_rng(seed)
    n = 32
    grid = Grid.box([(0.0, TWO_PI)], TWO_PI / n)
    kern = tempered_stable(gamma=0.5, skew=0.3)
    jump = JumpDiscretization(kern, grid)
    ff = Farfield("periodic")
    worst, fails = 0.0, 0
    for trial in range(trials):
        amp = rng.uniform(0.2, 1.0, size=3)
        ph = rng.uniform(0, TWO_PI, size=3)
        lift = rng.uniform(0.0, 0.5)
        bump = rng.uniform(0.0, 0.3)

        def g1(X, amp=amp, ph=ph):
            x = np.atleast_2d(X)[:, 0]
            return sum(a * np.cos((k + 1) * x + q) for k, (a, q) in enumerate(zip(amp, ph)))

        def g2(X, g1=g1, lift=lift, bump=bump):
            x = np.atleast_2d(X)[:, 0]
            return g1(X) + lift + bump * (1 + np.sin(x))

        c = rng.uniform(0.0, 1.0)
        f_up, f_down = rng.uniform(-1, 1, size=2)
        df = rng.uniform(0.0, 0.5)
        p1 = two_control_problem(a=0.1, b=rng.uniform(0.2, 1.0), c=c, f_up=f_up, f_down=f_down, initial=g1)
        p2 = two_control_problem(a=0.1, b=p1.eval("drift", 0, 0.0, np.zeros((1, 1)))[0, 0], c=c,
                                 f_up=f_up + df, f_down=f_down + df, initial=g2)
        theta = (0.0, 1.0, 0.5)[trial % 3]
        cfg = SchemeConfig(theta=theta, vartheta=0.0, cfl_mode="auto_dt", fp_tol=1e-13)
        r1 = BellmanScheme(p1, kern, grid, cfg, ff, jump=jump).run()
        r2 = BellmanScheme(p2, kern, grid, cfg, ff, jump=jump).run()
        good, v = discrete_comparison_check(r1, r2, tol)
        worst = max(worst, v)
        fails += not good
    return fails == 0, f"{trials} pairs, {fails} violations, max violation {worst:.2e}"


# ---------------------------------------------------------------- 5

def builtin_runs():
    """(label, problem, kernel, grid, cfg, farfield) for every built-in kernel."""
    runs = []
    for name, kern in builtin_kernels().items():
        M = kern.dim
        if M == 1:
            grid = Grid.box([(0.0, TWO_PI)], TWO_PI / 64)
            ff = Farfield("periodic")
        else:
            grid = Grid.box([(-1.0, 1.0)] * M, 0.25)
            ff = None
        probs = [("linear", linear_problem(a=0.2, b=0.3, c=0.5, f=1.0, dim=M)),
                 ("two_control", two_control_problem(a=0.1, c=0.3, f_up=0.5, f_down=-0.5, dim=M))]
        for pname, p in probs:
            for th, vt in ((0.0, 0.0), (1.0, 0.0), (0.5, 0.5)):
                cfg = SchemeConfig(theta=th, vartheta=vt, cfl_mode="auto_dt", dt=0.05)
                runs.append((f"{name}/{pname}/theta={th},vartheta={vt}", p, kern, grid, cfg, ff))
    return runs


@_timed(5, "L-infinity stability")
def stability():
    bad, count, tightest = [], 0, 0.0
    jumps = {}
    for label, p, kern, grid, cfg, ff in builtin_runs():
        key = (id(kern), grid)
        if key not in jumps:
            jumps[key] = JumpDiscretization(kern, grid, trunc_tol=1e-8)
        sol = BellmanScheme(p, kern, grid, cfg, ff, jump=jumps[key]).run(keep=False)
        count += 1
        tightest = max(tightest, max(d.sup_norm / d.bound for d in sol.diagnostics))
        if not sol.stable:
            bad.append(label)
    return not bad, (f"violations in {bad[:3]}" if bad else
                     f"{count} runs, max |U^n| / bound = {tightest:.4f}")


# ---------------------------------------------------------------- 6

IMPLICIT_CONFIGS = [(1.0, 0.0), (0.5, 0.5), (1.0, 1.0), (0.0, 1.0), (0.5, 0.0)]


def contraction_factors(kern, p, grid, theta, vartheta, dt, pairs=50, seed=7, ff=None):
    """Measured |TU - TV| / |U - V| on random pairs and the bound 1 - eps."""
    rng = np.random.default_rng(seed)
    cfg = SchemeConfig(theta=theta, vartheta=vartheta, dt=dt, cfl_mode="off")
    scheme = BellmanScheme(p, kern, grid, cfg, ff)
    lv = scheme.level(dt)
    system = implicit_system(lv, cfg)
    eps = 0.9 / (1 + dt * system.max_mass)
    U_prev = p.g(grid.points())
    E = explicit_part(U_prev, scheme.level(0.0), theta, vartheta, ff)
    T = relaxation_map(system, U_prev, E, dt, eps, dt, ff)
    ratios = []
    for _ in range(pairs):
        U = rng.uniform(-2, 2, grid.size)
        V = U + rng.normal(scale=rng.uniform(1e-3, 1.0), size=grid.size)
        ratios.append(np.abs(T(U) - T(V)).max() / np.abs(U - V).max())
    return np.array(ratios), 1 - eps


@_timed(6, "fixed-point contraction")
def contraction():
    grid = Grid.box([(0.0, TWO_PI)], TWO_PI / 64)
    ff = Farfield("periodic")
    worst, bad = -1.0, []
    cases = [("tempered_g05", tempered_stable(gamma=0.5)), ("tempered_g15", tempered_stable(gamma=1.5)),
             ("finite_exp", finite_exp())]
    for kname, kern in cases:
        for pname, p in (("linear", linear_problem(a=0.2, b=0.3)), ("two_control", two_control_problem())):
            for th, vt in IMPLICIT_CONFIGS:
                r, bound = contraction_factors(kern, p, grid, th, vt, dt=0.05, ff=ff)
                worst = max(worst, float((r - bound).max()))
                if np.any(r > bound + 1e-12):
                    bad.append(f"{kname}/{pname}/({th},{vt}): {r.max():.6f} > {bound:.6f}")
    return not bad, ("; ".join(bad[:3]) if bad else f"max(ratio - (1 - eps)) = {worst:.2e} over 50 pairs each")


# ---------------------------------------------------------------- 7

RATE_CASES = [
    ("finite_exp", finite_exp(), [32, 64, 128, 256]),
    ("tempered gamma 0.5", tempered_stable(gamma=0.5), [32, 64, 128, 256]),
    ("tempered gamma 1.5", tempered_stable(gamma=1.5), [64, 256, 1024, 4096]),
]


@_timed(7, "convergence rates")
def convergence():
    parts, ok = [], True
    base = linear_problem(a=0.1, b=0.3, c=0.2)
    for name, kern, levels in RATE_CASES:
        rep = rate_report(base, kern, levels, SchemeConfig(theta=1.0))
        ok &= rep.passed
        parts.append(f"{name}: order {rep.fit.slope:.2f} (>= {max(0.5, rep.guarantee)}), "
                     f"{'decreasing' if rep.strictly_decreasing else 'NOT decreasing'}")
    return ok, "; ".join(parts)


# ---------------------------------------------------------------- 8

@_timed(8, "switching system")
def switching(ks=(0.4, 0.2, 0.1, 0.05), tol=1e-6):
    p = two_control_problem(a=0.1, b=1.0, horizon=0.5)
    kern = tempered_stable(gamma=0.5)
    grid = Grid.box([(0.0, TWO_PI)], TWO_PI / 128)
    ff = Farfield("periodic")
    cfg = SchemeConfig(cfl_mode="auto_dt")
    study = switching_gap_study(p, [["up"], ["down"]], ks, kern, grid, cfg, ff)
    lower = min(r.lower for r in study.rows)
    spread_ok = all(r.spread <= r.k + 1e-12 for r in study.rows)
    sw = SwitchingProblem(p, [["up", "down"], ["up", "down"]], ks[-1])
    same = solve_switching(sw, kern, grid, cfg, ff)
    degenerate = float(np.abs(same.V - study.scalar.U).max())
    rate_ok = study.exponent is not None and study.exponent >= 1 / 3 - 0.1
    ok = lower >= -tol and spread_ok and study.monotone and degenerate <= 1e-10 and rate_ok
    return ok, (f"min(v_i - U) = {lower:.2e}, spread <= k: {spread_ok}, gap non-increasing: {study.monotone}, "
                f"gaps {[round(r.gap, 4) for r in study.rows]}, exponent {study.exponent:.2f} (>= 0.23), "
                f"identical partition error {degenerate:.1e}")


# ---------------------------------------------------------------- 9

def temporal_errors(steps=(40, 80, 160), ref_steps=1280, n=64):
    p = linear_problem(a=0.1, horizon=0.5)
    kern = tempered_stable(gamma=0.5)
    grid = Grid.box([(0.0, TWO_PI)], TWO_PI / n)
    ff = Farfield("periodic")
    jump = JumpDiscretization(kern, grid)

    def run(k):
        cfg = SchemeConfig(theta=0.5, vartheta=0.5, dt=p.horizon / k, fp_tol=1e-14)
        return BellmanScheme(p, kern, grid, cfg, ff, jump=jump).run(keep=False).U

    ref = run(ref_steps)
    return [(p.horizon / k, float(np.abs(run(k) - ref).max())) for k in steps]


@_timed(9, "Crank-Nicolson temporal order")
def crank_nicolson():
    fit = estimate_order(temporal_errors())
    return fit.slope >= 1.7, f"order {fit.slope:.2f}, pairs {[round(s, 2) for s in fit.pair_slopes]}"


CRITERIA = [weight_structure, mass_bounds, consistency, comparison, stability, contraction,
            convergence, switching, crank_nicolson]


def run_all(select=None, echo=print) -> list:
    out = []
    for i, fn in enumerate(CRITERIA, start=1):
        if select and i not in select:
            continue
        res = fn()
        if echo:
            echo(res.line())
        out.append(res)
    return out

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levybellman import Farfield, Grid, SchemeConfig, solve
from levybellman import _backend
from levybellman.errors import ConfigurationError, ConvergenceError, StepError
from levybellman.models import linear_problem, tempered_stable, two_control_problem
from levybellman.stepper import (BellmanScheme, cfl_max_dt, discrete_comparison_check, implicit_solve,
                                 relaxation_map)

TWO_PI = 2 * math.pi
PERIODIC = Farfield("periodic")


def periodic_grid(n=32):
    return Grid.box([(0.0, TWO_PI)], TWO_PI / n)


def test_cfl_examples():
    assert cfl_max_dt(4.0, 2.0, 0.0, 0.0, 0.0) == pytest.approx(1 / 6)
    assert cfl_max_dt(4.0, 2.0, 0.3, 1.0, 1.0) == math.inf
    assert cfl_max_dt(4.0, 5.0, 0.0, 1.0, 0.0) == pytest.approx(1 / 5)


def test_source_only_explicit():
    p = linear_problem(a=0.0, f=1.0, horizon=0.5)
    sol = solve(p, None, periodic_grid(), SchemeConfig(dt=0.05), PERIODIC)
    assert np.allclose(sol.U, p.g(periodic_grid().points()) + 0.5, atol=1e-14)


def test_sup_takes_smallest_source():
    p = two_control_problem(a=0.0, b=0.0, f_up=1.0, f_down=2.0, horizon=0.5)
    sol = solve(p, None, periodic_grid(), SchemeConfig(dt=0.05), PERIODIC)
    assert np.allclose(sol.U, p.g(periodic_grid().points()) + 0.5, atol=1e-14)
    assert np.all(sol.active == 0)


def test_duplicate_controls_match_single():
    kern = tempered_stable(gamma=0.5)
    g = periodic_grid()
    cfg = SchemeConfig(cfl_mode="auto_dt")
    two = solve(two_control_problem(a=0.2, b=0.0), kern, g, cfg, PERIODIC)
    one = solve(linear_problem(a=0.2, b=0.0), kern, g, cfg, PERIODIC)
    assert np.array_equal(two.U, one.U)


def test_implicit_source_only():
    p = linear_problem(a=0.0, f=1.0, horizon=0.5)
    # eps = 1 / (1 + dt * 0) is the largest admissible relaxation: one sweep is exact
    sol = solve(p, None, periodic_grid(), SchemeConfig(theta=1.0, dt=0.05, fp_eps=1.0), PERIODIC)
    assert np.allclose(sol.U, p.g(periodic_grid().points()) + 0.5, atol=1e-12)
    assert max(d.iterations for d in sol.diagnostics) == 1
    sol = solve(p, None, periodic_grid(), SchemeConfig(theta=1.0, dt=0.05), PERIODIC)
    assert np.allclose(sol.U, p.g(periodic_grid().points()) + 0.5, atol=1e-10)


def test_implicit_matches_explicit_small_dt():
    p = linear_problem(a=0.5, b=0.3, horizon=0.25)
    g = periodic_grid(32)
    exp = solve(p, None, g, SchemeConfig(cfl_mode="auto_dt", dt=0.01), PERIODIC)
    imp = solve(p, None, g, SchemeConfig(theta=1.0, dt=exp.dt), PERIODIC)
    assert np.abs(exp.U - imp.U).max() <= 10 * exp.dt


def test_zero_data_stays_zero():
    p = linear_problem(a=0.3, initial=lambda X: np.zeros(len(np.atleast_2d(X))))
    sol = solve(p, tempered_stable(gamma=1.5), periodic_grid(), SchemeConfig(cfl_mode="auto_dt"), PERIODIC)
    assert np.all(sol.U == 0)


@pytest.mark.parametrize("theta,vartheta", [(0, 0), (1, 0), (0.5, 0.5), (1, 1)])
def test_constants_preserved_and_stable(theta, vartheta):
    p = linear_problem(a=0.3, b=0.5, initial=lambda X: np.full(len(np.atleast_2d(X)), 2.5))
    sol = solve(p, tempered_stable(gamma=0.5, skew=0.3), periodic_grid(),
                SchemeConfig(theta, vartheta, dt=0.02, cfl_mode="auto_dt"), PERIODIC)
    assert np.abs(sol.U - 2.5).max() <= 1e-12
    assert sol.stable and sol.coefficients_positive


def test_stability_bound_with_discount_and_source():
    p = linear_problem(a=0.3, c=0.4, f=-0.7, horizon=0.5)
    sol = solve(p, tempered_stable(gamma=1.5), periodic_grid(), SchemeConfig(cfl_mode="auto_dt"), PERIODIC)
    assert sol.stable
    last = sol.diagnostics[-1]
    assert last.bound == pytest.approx(math.exp(0.4 * 0.5) * (1 + 0.5 * 0.7))


def test_comparison_constants():
    g = periodic_grid()
    kern = tempered_stable(gamma=0.5)
    cfg = SchemeConfig(cfl_mode="auto_dt")
    lo = solve(linear_problem(initial=lambda X: np.zeros(len(np.atleast_2d(X)))), kern, g, cfg, PERIODIC)
    hi = solve(linear_problem(initial=lambda X: np.ones(len(np.atleast_2d(X)))), kern, g, cfg, PERIODIC)
    ok, worst = discrete_comparison_check(lo, hi)
    assert ok and worst == 0
    assert np.allclose(hi.U - lo.U, 1.0, atol=1e-13)
    assert discrete_comparison_check(hi, hi) == (True, 0.0)


def test_cfl_enforced():
    p = linear_problem(a=0.5)
    with pytest.raises(StepError):
        solve(p, None, periodic_grid(64), SchemeConfig(dt=0.1), PERIODIC)


def test_fixed_point_errors():
    p = linear_problem(a=0.5)
    with pytest.raises(ConvergenceError) as err:
        solve(p, None, periodic_grid(), SchemeConfig(theta=1.0, dt=0.1, max_iter=3), PERIODIC)
    assert len(err.value.residual_history) == 4
    with pytest.raises(ConfigurationError):
        solve(p, None, periodic_grid(), SchemeConfig(theta=1.0, dt=0.1, fp_eps=0.9), PERIODIC)


def implicit_setup(theta=1.0, vartheta=1.0):
    p = two_control_problem(a=0.2, b=0.7)
    scheme = BellmanScheme(p, tempered_stable(gamma=1.5), periodic_grid(32),
                           SchemeConfig(theta, vartheta, dt=0.05), PERIODIC)
    lv = scheme.level(0.05)
    return scheme, scheme._system(lv)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9))
def test_relaxation_contracts(seed, frac):
    scheme, system = implicit_setup()
    dt = 0.05
    eps = frac / (1 + dt * system.max_mass)
    rng = np.random.default_rng(seed)
    n = system.n
    E = rng.normal(size=(system.m, n))
    T = relaxation_map(system, rng.normal(size=n), E, dt, eps)
    U, V = rng.normal(size=n), rng.normal(size=n)
    ratio = np.abs(T(U) - T(V)).max() / np.abs(U - V).max()
    assert ratio <= 1 - eps + 1e-12


@pytest.mark.skipif(_backend.NAME != "cython", reason="compiled core not built")
def test_backends_agree():
    scheme, system = implicit_setup(0.5, 1.0)
    rng = np.random.default_rng(0)
    U = rng.normal(size=system.n)
    E = rng.normal(size=(system.m, system.n))
    cfg = scheme.cfg
    a = implicit_solve(U, E, system, cfg, 0.05, 0.05, PERIODIC, backend="cython")
    b = implicit_solve(U, E, system, cfg, 0.05, 0.05, PERIODIC, backend="python")
    assert np.array_equal(a.U, b.U) and np.array_equal(a.active, b.active)
    assert a.iterations == b.iterations
    Q = rng.integers(0, 3, size=(4, 1000)).astype(float)        # many ties
    va, ia = _backend.get("cython").bellman_max(Q)
    vb, ib = _backend.get("python").bellman_max(Q)
    assert np.array_equal(va, vb) and np.array_equal(ia, ib)
    assert np.all(Q[ia, np.arange(1000)] == Q.max(axis=0))
    assert np.all([Q[:i, j].max(initial=-1) < Q[i, j] for j, i in enumerate(ia)])


def test_auto_dt_integer_steps():
    p = linear_problem(a=0.5, horizon=0.3)
    sol = solve(p, None, periodic_grid(64), SchemeConfig(cfl_mode="auto_dt"), PERIODIC)
    steps = 0.3 / sol.dt
    assert abs(steps - round(steps)) < 1e-9
    assert min(d.cfl_margin for d in sol.diagnostics) >= -1e-12


def test_solution_csv(tmp_path):
    p = two_control_problem()
    sol = solve(p, None, periodic_grid(), SchemeConfig(cfl_mode="auto_dt"), PERIODIC)
    sol.to_csv(tmp_path / "u.csv", tmp_path / "steps.csv")
    head = (tmp_path / "u.csv").read_text().splitlines()
    assert head[0] == "x1,value,active" and head[1].split(",")[-1] in ("up", "down")
    assert len((tmp_path / "steps.csv").read_text().splitlines()) == len(sol.diagnostics) + 1
    assert sol.field()(np.array([[1.0]])).shape == (1,)

import math

import numpy as np
import pytest

from levybellman import Farfield, Grid, SchemeConfig, solve
from levybellman.errors import ConfigurationError
from levybellman.models import tempered_stable, two_control_problem
from levybellman.switching import SwitchingProblem, project, solve_switching, switching_gap_study

PERIODIC = Farfield("periodic")
GRID = Grid.box([(0.0, 2 * math.pi)], 2 * math.pi / 32)
CFG = SchemeConfig(cfl_mode="auto_dt")
KERN = tempered_stable(gamma=0.5)
P = two_control_problem(a=0.1, b=1.0, f_up=0.2)


def test_identical_partition_is_scalar():
    scalar = solve(P, KERN, GRID, CFG, PERIODIC)
    sol = solve_switching(SwitchingProblem(P, [["up", "down"], ["up", "down"]], 0.1), KERN, GRID, CFG, PERIODIC)
    assert np.abs(sol.V - scalar.U[None, :]).max() <= 1e-12


def test_huge_cost_decouples():
    sol = solve_switching(SwitchingProblem(P, [["up"], ["down"]], 1e6), KERN, GRID, CFG, PERIODIC)
    for i, block in enumerate([[0], [1]]):
        from levybellman.stepper import BellmanScheme
        ref = BellmanScheme(P, KERN, GRID, CFG, PERIODIC, controls=block)
        assert ref.time_step() == sol.dt
        assert np.array_equal(sol.V[i], ref.run(keep=False).U)


def test_spread_bounded_by_cost():
    for k in (0.3, 0.05):
        sol = solve_switching(SwitchingProblem(P, [["up"], ["down"]], k), KERN, GRID, CFG, PERIODIC, keep=True)
        assert sol.max_spread <= k + 1e-12
        assert all(((V.max(axis=0) - V.min(axis=0)) <= k + 1e-12).all() for V in sol.trajectory)


def test_label_permutation_equivariance():
    a = solve_switching(SwitchingProblem(P, [["up"], ["down"]], 0.1), KERN, GRID, CFG, PERIODIC)
    b = solve_switching(SwitchingProblem(P, [["down"], ["up"]], 0.1), KERN, GRID, CFG, PERIODIC)
    assert np.array_equal(a.V[::-1], b.V)


def test_projection():
    V = np.array([[0.0, 1.0, 5.0], [2.0, 1.0, 0.0], [0.5, 3.0, 0.2]])
    W = project(V, 0.3)
    assert np.allclose(W, [[0.0, 1.0, 0.3], [0.3, 1.0, 0.0], [0.3, 1.3, 0.2]])
    assert np.all(W.max(axis=0) - W.min(axis=0) <= 0.3 + 1e-15)


def test_gap_study():
    study = switching_gap_study(P, [["up"], ["down"]], [0.4, 0.2, 0.1], KERN, GRID, CFG, PERIODIC)
    assert study.monotone
    assert min(r.lower for r in study.rows) >= -1e-6
    assert study.exponent >= 1 / 3 - 0.1


def test_validation():
    with pytest.raises(ConfigurationError):
        SwitchingProblem(P, [["up"]], 0.1)
    with pytest.raises(ConfigurationError):
        SwitchingProblem(P, [["up"], ["down"]], 0.0)
    with pytest.raises(ConfigurationError):
        SwitchingProblem(P, [["up", "down"]] * 9, 0.1)

import numpy as np
import pytest

from levybellman import ControlProblem, SamplingPlan, validate_assumptions
from levybellman.errors import ConfigurationError, DataError
from levybellman.models import KERNELS, builtin_kernels, linear_problem, make_kernel, two_control_problem
from levybellman.problem import LevyKernel


def const_problem(jump=lambda t, X, Z: Z):
    return ControlProblem(
        controls=("only",),
        sigma=lambda t, X: np.broadcast_to(np.eye(1), (len(X), 1, 1)).copy(),
        drift=lambda t, X: np.zeros((len(X), 1)),
        discount=lambda t, X: np.zeros(len(X)),
        source=lambda t, X: np.ones(len(X)),
        jump=jump,
        initial=lambda X: np.cos(X[:, 0]),
        horizon=1.0)


PLAN = SamplingPlan(times=[0.0, 0.5, 1.0], xs=np.array([[-1.0], [0.0], [1.0]]),
                    zs=np.array([[-0.5], [0.1], [0.7], [2.0]]))


def test_constant_coefficients_pass():
    kern = make_kernel("finite_exp")
    rep = validate_assumptions(const_problem(), kern, PLAN)
    assert rep.passed, rep.failures()
    assert rep["source_norm1"].estimate == pytest.approx(1.0)


def test_envelope_violation_detected():
    # density more singular than the declared gamma
    kern = LevyKernel(lambda Z: np.abs(Z[:, 0]) ** -1.8, gamma=0.5, decay_lambda=0.0, decay_eps=0.1,
                      bound_K=1.0, kind="singular_gamma_lt_1")
    plan = SamplingPlan(times=[0.0], xs=np.zeros((1, 1)), zs=np.array([[1e-4], [1e-3], [0.5]]))
    rep = validate_assumptions(const_problem(), kern, plan)
    assert not rep["kernel_envelope"].passed


def test_jump_lipschitz_in_x():
    p = const_problem(jump=lambda t, X, Z: Z * (1 + np.abs(X)))
    plan = SamplingPlan(times=[0.0], xs=np.array([[-1.0], [0.0], [1.0]]), zs=np.array([[0.5]]))
    rep = validate_assumptions(p, None, plan, caps={"jump_lipschitz_x": 2.0, "jump_growth": 3.0})
    chk = rep["jump_lipschitz_x"]
    assert chk.estimate == pytest.approx(1.0)
    assert chk.passed


def test_validation_is_deterministic():
    kern = builtin_kernels()["tempered_g05"]
    a = validate_assumptions(linear_problem(), kern, PLAN).rows()
    b = validate_assumptions(linear_problem(), kern, PLAN).rows()
    assert a == b


@pytest.mark.parametrize("name", sorted(builtin_kernels()))
def test_builtin_models_validate(name):
    kern = builtin_kernels()[name]
    N = kern.dim
    rng = np.random.default_rng(1)
    plan = SamplingPlan(times=[0.0, 0.25, 0.5], xs=rng.uniform(-1, 1, (4, N)),
                        zs=rng.uniform(-2, 2, (5, N)))
    for p in (linear_problem(dim=N), two_control_problem(dim=N)):
        rep = validate_assumptions(p, kern, plan)
        assert rep.passed, rep.failures()


def test_coefficient_failure_names_point():
    def bad(t, X):
        raise ValueError("boom")
    p = ControlProblem(controls=("a",), sigma=lambda t, X: np.ones((len(X), 1, 1)), drift=bad,
                       discount=lambda t, X: np.zeros(len(X)), source=lambda t, X: np.zeros(len(X)),
                       jump=lambda t, X, Z: Z, initial=lambda X: X[:, 0], horizon=1.0)
    with pytest.raises(DataError, match="drift"):
        validate_assumptions(p, None, PLAN)


def test_construction_errors():
    with pytest.raises(ConfigurationError):
        linear_problem(horizon=0.0)
    with pytest.raises(ConfigurationError):
        make_kernel("nope")
    with pytest.raises(ConfigurationError):
        LevyKernel(lambda Z: Z[:, 0], gamma=1.5, decay_lambda=1, decay_eps=0.1, bound_K=1,
                   kind="singular_gamma_lt_1")
    assert set(KERNELS) == {"finite_exp", "tempered_stable", "frac_laplace_trunc"}

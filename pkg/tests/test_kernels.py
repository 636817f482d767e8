import math

import numpy as np
import pytest
from scipy import integrate, special

from levybellman import kernels as kn
from levybellman.errors import ConfigurationError
from levybellman.models import builtin_kernels, linear_problem, tempered_stable, zero_kernel
from levybellman.problem import ControlProblem, LevyKernel


def one_sided(gamma, kind):
    """e^{-z} z^{-1-gamma} on z > 0."""
    def density(Z):
        z = Z[:, 0]
        out = np.zeros(len(z))
        pos = z > 0
        out[pos] = np.exp(-z[pos]) * z[pos] ** (-1 - gamma)
        return out
    return LevyKernel(density, gamma, 0.9, 0.1, 1.0, kind)


def jump_problem(jump, N=1):
    return ControlProblem(controls=("a",), sigma=lambda t, X: np.zeros((len(X), N, N)),
                          drift=lambda t, X: np.zeros((len(X), N)), discount=lambda t, X: np.zeros(len(X)),
                          source=lambda t, X: np.zeros(len(X)), jump=jump, initial=lambda X: X[:, 0],
                          horizon=1.0, dim_x=N, dim_z=N)


def test_first_cell_weight_closed_form():
    kern = LevyKernel(lambda Z: np.exp(-2 * np.abs(Z[:, 0])), 0.0, 1.9, 0.1, 1.0, "finite")
    tails, (plus, minus) = kn.build_single_tail(kern, 0.5, 1e-12)
    assert plus.weights[0] == pytest.approx((1 - math.exp(-1)) / 4, abs=1e-10)
    assert tails.khat(0.3) == pytest.approx(math.exp(-0.6) / 2, rel=1e-10)
    assert np.allclose(plus.weights, minus.weights)


def test_zero_kernel_tables():
    tails, tabs = kn.build_single_tail(zero_kernel(1), 0.1)
    assert tails.total_mass == 0 and all(np.all(t.weights == 0) for t in tabs)
    tails, tabs = kn.build_double_tail(zero_kernel(1, "singular_gamma_ge_1"), 0.1)
    assert tails.total_mass == 0 and tails.ktilde(0.5) == 0
    polar, _ = kn.build_polar_tails(zero_kernel(2), 0.1, 16, "single")
    assert np.all(polar.radial_mass == 0)


def test_single_tail_mass_and_monotone():
    tails, (plus, minus) = kn.build_single_tail(one_sided(0.5, "singular_gamma_lt_1"), 2.0 ** -6, 1e-12)
    d = plus.differences()
    assert np.all(d >= -1e-14 * plus.weights[0])
    # int_0^inf khat = int_0^inf z k(z) dz = Gamma(1/2)
    assert plus.weights.sum() == pytest.approx(math.sqrt(math.pi), rel=1e-6)
    assert np.all(minus.weights == 0)


def test_double_tail_bound_and_oracle():
    kern = one_sided(1.5, "singular_gamma_ge_1")
    tails, (plus, _) = kn.build_double_tail(kern, 2.0 ** -6, 1e-12)
    for z in (0.1, 1.0, 5.0):
        ref = integrate.quad(lambda s: (s - z) * math.exp(-s) * s ** -2.5, z, np.inf, epsabs=1e-13, limit=200)[0]
        assert tails.ktilde(z) == pytest.approx(ref, rel=1e-8)
        # int_z^inf (s - z) s^{-5/2} ds = (4/3) z^{-1/2}
        assert tails.ktilde(z) <= 4 / 3 * z ** -0.5 * math.exp(-z)
    assert np.all(plus.second_differences() >= -1e-14 * plus.weights[0])


def test_double_tail_symmetric():
    _, (plus, minus) = kn.build_double_tail(tempered_stable(gamma=1.5), 2.0 ** -5)
    assert np.allclose(plus.weights, minus.weights, rtol=1e-12, atol=0)


SINGULAR = sorted(k for k, v in builtin_kernels().items() if v.kind != "finite")


@pytest.mark.parametrize("name", SINGULAR)
def test_tables_nonnegative_and_shaped(name):
    kern = builtin_kernels()[name]
    order = "single" if kern.kind == "singular_gamma_lt_1" else "double"
    for dx in (2.0 ** -3, 2.0 ** -5):
        if kern.dim == 1:
            build = kn.build_single_tail if order == "single" else kn.build_double_tail
            tabs = build(kern, dx)[1]
        else:
            tabs = kn.build_polar_tails(kern, dx, 16, order)[1]
        for t in tabs:
            scale = 1e-14 * max(1.0, t.weights[0])
            assert np.all(t.weights >= 0)
            d = t.differences() if order == "single" else t.second_differences()
            assert d.size == 0 or d.min() >= -scale


def test_first_weight_scaling():
    gamma = 0.5
    dxs = [2.0 ** -j for j in range(3, 8)]
    k0 = [kn.build_single_tail(tempered_stable(gamma=gamma), dx)[1][0].weights[0] for dx in dxs]
    slope = np.polyfit(np.log(dxs), np.log(k0), 1)[0]
    assert abs(slope - (1 - gamma)) <= 0.15


def test_polar_isotropy():
    polar, tabs = kn.build_polar_tails(tempered_stable(gamma=0.5, dim=2), 0.05, 16, "single")
    ref = tabs[0].weights
    assert all(np.allclose(t.weights, ref, rtol=1e-10) for t in tabs)
    assert polar.sphere_weights.min() > 0
    assert polar.sphere_weights.sum() == pytest.approx(2 * math.pi)


def test_polar_half_plane_masses():
    def density(Z):
        r = np.linalg.norm(Z, axis=1)
        return np.where(Z[:, 0] > 0, np.exp(-r) / np.maximum(r, 1e-300) ** 2.5, 0.0)
    kern = LevyKernel(density, 0.5, 0.9, 0.1, 1.0, "singular_gamma_lt_1", dim=2)
    polar, _ = kn.build_polar_tails(kern, 0.05, 16, "single", 1e-10)
    y1 = polar.directions[:, 0]
    assert np.all(polar.radial_mass[y1 < -1e-12] == 0)
    assert np.all(polar.radial_mass[y1 > 1e-12] > 0)
    # radial mass of one ray: int_0^inf r * e^{-r} r^{-2.5} r dr = Gamma(1/2)
    assert polar.radial_mass[np.argmax(y1)] == pytest.approx(math.sqrt(math.pi), rel=1e-6)


def test_polar_order_mismatch():
    with pytest.raises(ConfigurationError):
        kn.build_polar_tails(tempered_stable(gamma=1.5, dim=2), 0.1, 16, "single")
    with pytest.raises(ConfigurationError):
        kn.sphere_rule(3, rule=(np.eye(3), np.array([1.0, -1.0, 1.0])))


def test_bbar():
    box = LevyKernel(lambda Z: ((Z[:, 0] > 0) & (Z[:, 0] < 1)).astype(float), 0.0, 0.0, 1.0, math.e,
                     "finite", support_radius=1.0)
    p = jump_problem(lambda t, X, Z: Z)
    x = np.zeros((1, 1))
    assert kn.drift_correction_bbar(box, p, 0, 0.0, x)[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert kn.drift_correction_bbar(tempered_stable(gamma=0.5), p, 0, 0.0, x)[0, 0] == pytest.approx(0, abs=1e-10)
    assert kn.drift_correction_bbar(zero_kernel(1), p, 0, 0.0, x)[0, 0] == 0
    quad = jump_problem(lambda t, X, Z: Z + Z ** 2)
    assert kn.drift_correction_bbar(box, quad, 0, 0.0, x)[0, 0] == pytest.approx(5 / 6, abs=1e-10)


def test_btilde():
    kern = one_sided(1.5, "singular_gamma_ge_1")
    x = np.zeros((1, 1))
    lin = jump_problem(lambda t, X, Z: Z)
    assert kn.drift_correction_btilde(kern, lin, 0, 0.0, x)[0, 0] == pytest.approx(0, abs=1e-9)
    zero = zero_kernel(1, "singular_gamma_ge_1")
    assert kn.drift_correction_btilde(zero, lin, 0, 0.0, x)[0, 0] == 0
    quad = jump_problem(lambda t, X, Z: Z + Z ** 2)
    # 2 int ktilde = int z^2 k = Gamma(1/2)
    two_mass = 2 * integrate.quad(lambda z: z * z / 2 * math.exp(-z) * z ** -2.5, 0, np.inf)[0]
    assert two_mass == pytest.approx(special.gamma(0.5))
    assert kn.drift_correction_btilde(kern, quad, 0, 0.0, x)[0, 0] == pytest.approx(two_mass, rel=1e-7)


def test_default_dz():
    assert kn.default_dz(2.0 ** -6) == 8 * 2.0 ** -6
    assert kn.snap_dz(0.01, 0.104) == pytest.approx(0.1)

import math

import numpy as np
import pytest
from scipy import special

from levybellman import SchemeConfig
from levybellman.errors import DataError
from levybellman.harness import (estimate_order, guaranteed_exponent, manufactured_run, oracle_J,
                                 rate_report)
from levybellman.models import linear_problem, tempered_stable, zero_kernel
from levybellman.problem import LevyKernel

BOX = LevyKernel(lambda Z: (np.abs(Z[:, 0]) <= 1).astype(float), 0.0, 0.0, 1.0, math.e, "finite",
                 support_radius=1.0, symmetric=True)
P1 = linear_problem()
cos_sum = lambda X: np.cos(np.atleast_2d(X).sum(axis=1))
sin0 = lambda X: np.sin(np.atleast_2d(X)[:, 0])


def tempered_cos_at_zero(gamma):
    """int (cos z - 1) e^{-|z|} |z|^{-1-gamma} dz = 2 Gamma(-gamma) [Re (1 - i)^gamma - 1]."""
    return 2 * special.gamma(-gamma) * (((1 - 1j) ** gamma).real - 1)


def test_oracle_box_sine():
    val = oracle_J(BOX, P1, 0, 0.0, [math.pi / 2], sin0, grad=lambda x: np.cos(x))
    assert val == pytest.approx(2 * (math.sin(1) - 1), abs=1e-8)


def test_oracle_trivial_cases():
    kern = tempered_stable(gamma=1.5)
    assert oracle_J(kern, P1, 0, 0.0, [0.4], lambda X: np.full(len(X), 2.0), grad=lambda x: 0 * x) == pytest.approx(0, abs=1e-10)
    affine = lambda X: 3 * np.atleast_2d(X)[:, 0] - 1
    assert oracle_J(kern, P1, 0, 0.0, [0.4], affine, grad=lambda x: np.array([3.0])) == pytest.approx(0, abs=1e-9)
    assert oracle_J(zero_kernel(1), P1, 0, 0.0, [0.4], affine) == 0.0


@pytest.mark.parametrize("gamma,frozen", [(0.5, -0.6996521477568655), (1.5, -1.6845673037929525)])
def test_oracle_tempered_closed_form(gamma, frozen):
    assert tempered_cos_at_zero(gamma) == pytest.approx(frozen, abs=1e-14)
    val = oracle_J(tempered_stable(gamma=gamma), P1, 0, 0.0, [0.0], cos_sum, grad=lambda x: -np.sin(x))
    assert val == pytest.approx(frozen, abs=1e-8)


def test_oracle_isotropic_2d():
    # int (cos(z1 + z2) - 1) e^{-|z|}/|z|^{2.5} dz in polar form reduces to a theta integral of the 1-D case
    from scipy import integrate
    p2 = linear_problem(dim=2)
    kern = tempered_stable(gamma=0.5, dim=2)
    radial = lambda c: 2 * special.gamma(-0.5) * (((1 - 1j * c) ** 0.5).real - 1) / 2
    ref = integrate.quad(lambda th: radial(abs(math.cos(th) + math.sin(th))), 0, 2 * math.pi, epsabs=1e-12)[0]
    val = oracle_J(kern, p2, 0, 0.0, [0.0, 0.0], cos_sum, tol=1e-9, grad=lambda x: -np.sin(x.sum()) * np.ones(2))
    assert val == pytest.approx(ref, abs=1e-8)


def test_estimate_order_examples():
    h = [0.1, 0.05, 0.025]
    assert estimate_order(list(zip(h, h))).slope == pytest.approx(1.0)
    assert estimate_order(list(zip(h, [0.3] * 3))).slope == pytest.approx(0.0, abs=1e-12)
    fit = estimate_order(list(zip(h, [0.09, 0.047, 0.0243])))
    assert fit.slope == pytest.approx(0.944, abs=1e-3)
    assert len(fit.pair_slopes) == 2
    with pytest.raises(DataError):
        estimate_order(list(zip(h, [0.1, 0.0, 0.01])))
    with pytest.raises(DataError):
        estimate_order([(0.1, 0.1), (0.05, 0.05)])


def test_guaranteed_exponents():
    assert guaranteed_exponent(tempered_stable(gamma=0.5)) == 0.2
    assert guaranteed_exponent(tempered_stable(gamma=1.5)) == 0.1
    assert guaranteed_exponent(None) == 0.2


def test_heat_order():
    rows = manufactured_run(linear_problem(a=0.5), None, [16, 32, 64, 128], SchemeConfig(theta=1.0))
    errs = [r.sup_error for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert estimate_order([(r.dx, r.sup_error) for r in rows]).slope >= 0.9


def test_tempered_order():
    rep = rate_report(linear_problem(a=0.1, b=0.3, c=0.2), tempered_stable(gamma=0.5), [32, 64, 128],
                      SchemeConfig(theta=1.0))
    assert rep.passed and rep.fit.slope >= 0.5


def test_rate_report_structure_and_determinism(tmp_path):
    args = (linear_problem(a=0.5), None, [16, 32, 64], SchemeConfig(theta=1.0))
    rep = rate_report(*args)
    table = rep.table()
    assert len(table) == 4 and table[-1][0] == "guarantee"
    rep.to_csv(tmp_path / "a.csv")
    rate_report(*args).to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with pytest.raises(DataError):
        rate_report(linear_problem(), None, [], SchemeConfig(theta=1.0))

import numpy as np
import pytest

from levybellman import ControlProblem, Farfield, Grid
from levybellman.errors import MonotonicityError
from levybellman.local import build_L, local_stencil, local_weights
from levybellman.models import linear_problem


def const_problem(A, b):
    A, b = np.asarray(A, float), np.asarray(b, float)
    N = len(b)
    s = np.linalg.cholesky(2 * A) if np.any(A) else np.zeros((N, N))
    return ControlProblem(controls=("a",), sigma=lambda t, X: np.broadcast_to(s, (len(X), N, N)).copy(),
                          drift=lambda t, X: np.broadcast_to(b, (len(X), N)).copy(),
                          discount=lambda t, X: np.zeros(len(X)), source=lambda t, X: np.zeros(len(X)),
                          jump=lambda t, X, Z: Z, initial=lambda X: X[:, 0], horizon=1.0, dim_x=N, dim_z=N)


def test_kushner_1d_weights():
    g = Grid.box([(-1, 1)], 0.1)
    st = local_stencil(const_problem([[1.0]], [3.0]), 0, 0.0, g, (0,), Farfield("clamp"))
    w = dict(zip(map(tuple, st.targets), st.weights))
    assert w[(1,)] == pytest.approx(130.0)
    assert w[(-1,)] == pytest.approx(100.0)
    assert st.diag_mass == pytest.approx(230.0)


def test_zero_coefficients_empty():
    g = Grid.box([(-1, 1)], 0.1)
    st = local_stencil(const_problem([[0.0]], [0.0]), 0, 0.0, g, (0,), Farfield("clamp"))
    assert len(st) == 0 or np.all(st.weights == 0)


def test_laplacian_of_quadratic_2d():
    g = Grid.box([(-1, 1), (-1, 1)], 0.25)
    L = build_L(const_problem(np.eye(2), [0.0, 0.0]), 0, 0.0, g, Farfield("clamp"))
    U = (g.points() ** 2).sum(axis=1)
    inner = np.all(np.abs(g.points()) < 1 - 1e-9, axis=1)
    assert np.allclose(L.apply(U)[inner], 4.0)


def test_cross_terms_nonnegative_and_exact():
    A = np.array([[1.0, 0.4], [0.4, 0.8]])
    offs, w = local_weights(A, np.array([0.5, -0.2]), 0.1)
    assert np.all(w >= 0)
    # exact on quadratics: sum w (phi(x + o) - phi(x)) = tr(A D2 phi) + b . D phi
    Q = np.array([[2.0, 1.0], [1.0, -0.5]])
    phi = lambda y: 0.5 * y @ Q @ y
    val = sum(wk * phi(0.1 * np.asarray(o)) for o, wk in zip(offs, w))
    upwind = 0.1 / 2 * (np.abs([0.5, -0.2]) @ np.diag(Q))   # O(h) upwind remainder
    assert val == pytest.approx(np.trace(A @ Q) + upwind, rel=1e-12)


def test_dominance_violation():
    A = np.array([[1.0, 0.8], [0.8, 0.7]])     # positive definite, row 2 not dominant
    g = Grid.box([(-1, 1), (-1, 1)], 0.25)
    with pytest.raises(MonotonicityError):
        build_L(const_problem(A, [0.0, 0.0]), 0, 0.0, g, Farfield("clamp"))


def test_consistency_order():
    p = linear_problem(a=0.5, b=0.3)
    errs, hs = [], [2.0 ** -k for k in (4, 5, 6, 7)]
    for h in hs:
        g = Grid.box([(-1, 1)], h)
        x0 = 0.25
        st = local_stencil(p, 0, 0.0, g, (round(x0 / h),), Farfield.initial(p.g))
        exact = -0.5 * np.cos(x0) - 0.3 * np.sin(x0)
        errs.append(abs(st.apply(g, p.g(g.points()), 0.0, Farfield.initial(p.g)) - exact))
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 0.9

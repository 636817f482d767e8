"""Built-in Levy kernels and model problems, addressable by string id."""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .problem import ControlProblem, LevyKernel


def _kind(gamma, finite=False):
    if finite:
        return "finite"
    return "singular_gamma_lt_1" if gamma < 1 else "singular_gamma_ge_1"


def _side_factor(Z, skew):
    # (1 + skew) on z_1 > 0, (1 - skew) on z_1 < 0; skew=1 is one-sided
    return np.where(Z[:, 0] > 0, 1.0 + skew, np.where(Z[:, 0] < 0, 1.0 - skew, 1.0))


def finite_exp(kappa=1.0, lam=1.0, skew=0.0, dim=1) -> LevyKernel:
    """k(z) = kappa exp(-lam |z|), a finite measure."""
    kappa, lam, skew, dim = float(kappa), float(lam), float(skew), int(dim)
    if lam <= 0 or kappa < 0 or abs(skew) > 1:
        raise ConfigurationError("finite_exp needs lam > 0, kappa >= 0, |skew| <= 1")

    def density(Z):
        Z = np.asarray(Z, dtype=float).reshape(-1, dim)
        r = np.linalg.norm(Z, axis=1)
        return kappa * _side_factor(Z, skew) * np.exp(-lam * r)

    # sup_r r^M exp(-lam r / 2) = (2M / (lam e))^M
    K = max(kappa * (1 + abs(skew)) * (2 * dim / (lam * np.e)) ** dim, 1e-300)
    return LevyKernel(density, 0.0, 0.0, lam / 2, K, "finite", dim, None, skew == 0,
                      "finite_exp", dict(kappa=kappa, lam=lam, skew=skew, dim=dim))


def tempered_stable(gamma=0.5, kappa=1.0, lam=1.0, skew=0.0, dim=1) -> LevyKernel:
    """k(z) = kappa exp(-lam |z|) / |z|^(M + gamma)."""
    gamma, kappa, lam, skew, dim = float(gamma), float(kappa), float(lam), float(skew), int(dim)
    if lam <= 0 or kappa < 0 or abs(skew) > 1:
        raise ConfigurationError("tempered_stable needs lam > 0, kappa >= 0, |skew| <= 1")

    def density(Z):
        Z = np.asarray(Z, dtype=float).reshape(-1, dim)
        r = np.linalg.norm(Z, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = kappa * _side_factor(Z, skew) * np.exp(-lam * r) / r ** (dim + gamma)
        return np.where(r > 0, out, 0.0)

    K = max(kappa * (1 + abs(skew)), 1e-300)
    return LevyKernel(density, gamma, 0.0, lam, K, _kind(gamma), dim, None, skew == 0,
                      "tempered_stable", dict(gamma=gamma, kappa=kappa, lam=lam, skew=skew, dim=dim))


def frac_laplace_trunc(gamma=0.5, R=1.0, kappa=1.0, dim=1) -> LevyKernel:
    """k(z) = kappa |z|^(-M - gamma) on |z| <= R, zero outside."""
    gamma, R, kappa, dim = float(gamma), float(R), float(kappa), int(dim)
    if R <= 0 or kappa < 0:
        raise ConfigurationError("frac_laplace_trunc needs R > 0, kappa >= 0")

    def density(Z):
        Z = np.asarray(Z, dtype=float).reshape(-1, dim)
        r = np.linalg.norm(Z, axis=1)
        with np.errstate(divide="ignore"):
            out = kappa / r ** (dim + gamma)
        return np.where((r > 0) & (r <= R), out, 0.0)

    K = max(kappa * np.exp(R), 1e-300)
    return LevyKernel(density, gamma, 0.0, 1.0, K, _kind(gamma), dim, R, True,
                      "frac_laplace_trunc", dict(gamma=gamma, R=R, kappa=kappa, dim=dim))


def zero_kernel(dim=1, kind="finite") -> LevyKernel:
    return LevyKernel(lambda Z: np.zeros(len(np.asarray(Z).reshape(-1, dim))),
                      {"finite": 0.0, "singular_gamma_lt_1": 0.5, "singular_gamma_ge_1": 1.5}[kind],
                      0.0, 1.0, 1.0, kind, dim, None, True, "zero", dict(dim=dim))


KERNELS = {
    "finite_exp": finite_exp,
    "tempered_stable": tempered_stable,
    "frac_laplace_trunc": frac_laplace_trunc,
}


def make_kernel(name: str, **params) -> LevyKernel:
    try:
        factory = KERNELS[name]
    except KeyError:
        raise ConfigurationError(f"unknown kernel model {name!r}; known: {sorted(KERNELS)}") from None
    return factory(**params)


def builtin_kernels() -> dict:
    """The reference family used by the property checks."""
    return {
        "finite_exp": finite_exp(kappa=1.0, lam=1.0),
        "finite_exp_skew": finite_exp(kappa=2.0, lam=3.0, skew=0.5),
        "tempered_g0": tempered_stable(gamma=0.0),
        "tempered_g05": tempered_stable(gamma=0.5),
        "tempered_g05_one_sided": tempered_stable(gamma=0.5, skew=1.0),
        "tempered_g10": tempered_stable(gamma=1.0),
        "tempered_g15": tempered_stable(gamma=1.5),
        "tempered_g15_skew": tempered_stable(gamma=1.5, lam=2.0, skew=0.5),
        "frac_trunc_g05": frac_laplace_trunc(gamma=0.5, R=1.0),
        "frac_trunc_g15": frac_laplace_trunc(gamma=1.5, R=1.0),
        "tempered_g05_2d": tempered_stable(gamma=0.5, dim=2),
        "tempered_g15_2d": tempered_stable(gamma=1.5, dim=2),
        "finite_exp_2d": finite_exp(dim=2),
    }


# ------------------------------------------------------------ model problems

def _const(value, shape_fn):
    return lambda t, X: np.broadcast_to(value, shape_fn(np.atleast_2d(X))).copy()


def linear_problem(a=0.5, b=0.0, c=0.0, f=0.0, horizon=0.5, dim=1, jump_mod=0.0,
                   jump_scale=1.0, initial=None) -> ControlProblem:
    """Single control: constant diffusion a*I, drift b, discount c, source f,
    jumps eta = jump_scale * z * (1 + jump_mod * cos(sum x)), g = cos(sum x)."""
    N = int(dim)
    s = np.sqrt(2 * float(a)) * np.eye(N)
    bvec = np.full(N, float(b))
    mod, scale = float(jump_mod), float(jump_scale)

    def jump(t, X, Z):
        fac = scale * (1.0 + mod * np.cos(X.sum(axis=1)))
        return fac[:, None] * Z

    g = initial or (lambda X: np.cos(np.atleast_2d(X).sum(axis=1)))
    return ControlProblem(
        controls=("a0",),
        sigma=_const(s, lambda X: (len(X), N, N)),
        drift=_const(bvec, lambda X: (len(X), N)),
        discount=_const(float(c), lambda X: (len(X),)),
        source=_const(float(f), lambda X: (len(X),)),
        jump=jump, initial=g, horizon=float(horizon), dim_x=N, dim_z=N)


def two_control_problem(a=0.1, b=1.0, c=0.0, f_up=0.0, f_down=0.0, horizon=0.5, dim=1,
                        jump_scale=1.0, initial=None) -> ControlProblem:
    """Controls 'up' and 'down' push the state with drift +b and -b."""
    N = int(dim)
    s = np.sqrt(2 * float(a)) * np.eye(N)
    g = initial or (lambda X: np.cos(np.atleast_2d(X).sum(axis=1)))
    scale = float(jump_scale)
    return ControlProblem(
        controls=("up", "down"),
        sigma=_const(s, lambda X: (len(X), N, N)),
        drift=(_const(np.full(N, float(b)), lambda X: (len(X), N)),
               _const(np.full(N, -float(b)), lambda X: (len(X), N))),
        discount=_const(float(c), lambda X: (len(X),)),
        source=(_const(float(f_up), lambda X: (len(X),)), _const(float(f_down), lambda X: (len(X),))),
        jump=lambda t, X, Z: scale * Z, initial=g, horizon=float(horizon), dim_x=N, dim_z=N)


PROBLEMS = {
    "linear": linear_problem,
    "two_control": two_control_problem,
}


def make_problem(name: str, **params) -> ControlProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem model {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**params)

"""Monotone quadrature stencils for the jump operator

    J[phi](x) = int (phi(x + eta(t, x, z)) - phi(x) - 1_{|z|<=1} eta . D phi(x)) k(z) dz

in the three regimes: finite measure, singularity order below one (one
integration by parts, first differences along rays) and order in [1, 2)
(two integrations by parts, second differences along rays). Each regime is
a list of rays with positive coefficients plus an upwind drift term.
"""
from __future__ import annotations

import numpy as np

from . import kernels as kn
from .errors import ConfigurationError
from .lattice import Farfield, Grid
from .problem import ControlProblem, LevyKernel
from .stencil import Operator, Stencil, assemble, drift_operator

_CHUNK = 2_000_000


def _ray_operator(schemes, p, alpha, t, grid, farfield, nodes) -> Operator:
    """Sum over rays of coef * (phi(x + eta(t, x, r y)) - phi(x))."""
    n = grid.size
    nodes = np.arange(n) if nodes is None else np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    X = grid.multi_index(nodes) * grid.dx
    op = None
    nominal = np.zeros(n)
    rows, pts, ws = [], [], []
    pending = 0

    def flush():
        nonlocal op, rows, pts, ws, pending
        if not rows:
            return
        part = assemble(grid, np.concatenate(rows), np.concatenate(pts), np.concatenate(ws),
                        farfield, nominal=np.zeros(n))
        op = part if op is None else op.combine(part)
        rows, pts, ws, pending = [], [], [], 0

    for sch in schemes:
        coef = sch.sphere_weight * sch.coefs
        keep = coef > 0
        offs, coef = sch.offsets[keep], coef[keep]
        if not len(coef):
            continue
        nominal[nodes] += coef.sum()
        step = max(1, _CHUNK // max(len(nodes), 1))
        for lo in range(0, len(coef), step):
            o, c = offs[lo:lo + step], coef[lo:lo + step]
            k = len(o)
            Z = np.tile(o[:, None] * sch.direction[None, :], (len(nodes), 1))
            Xr = np.repeat(X, k, axis=0)
            tgt = Xr + p.eval("jump", alpha, t, Xr, Z)
            rows.append(np.repeat(nodes, k))
            pts.append(tgt)
            ws.append(np.tile(c, len(nodes)))
            pending += k * len(nodes)
            if pending >= _CHUNK:
                flush()
    flush()
    if op is None:
        op = Operator.empty(grid)
    op.nominal = nominal
    return op


def _result(op: Operator, grid, node):
    if node is None:
        return op
    return op.stencil(grid.node_index(node))


def _node_list(grid, node):
    return None if node is None else [grid.node_index(node)]


def build_J_finite(kern: LevyKernel, p: ControlProblem, alpha: int, t: float, grid: Grid,
                   node=None, quad=None, farfield: Farfield | None = None, dz=None,
                   trunc_tol=1e-10, sphere_nodes=32):
    """Positive quadrature of int (phi(x + eta) - phi(x)) k dz (no drift term).

    quad: optional (nodes (K, M), weights (K,)) rule; default is hat lumping
    on the lattice n * dz along each ray (dz defaults to dx).
    """
    if kern.kind != "finite":
        raise ConfigurationError("build_J_finite needs a finite measure")
    if quad is not None:
        schemes = kn.quadrature_schemes(*quad)
    else:
        schemes, _, _ = kn.build_finite(kern, grid.dx, trunc_tol, dz, sphere_nodes)
    return _result(_ray_operator(schemes, p, alpha, t, grid, farfield, _node_list(grid, node)), grid, node)


def build_J_single_tail_1d(tails: kn.TailKernel1D, p, alpha, t, grid, node=None, farfield=None):
    if tails.schemes and abs(tails.schemes[0].offsets[0] - grid.dx) > 1e-12 * grid.dx:
        raise ConfigurationError("weight tables were built for a different dx")
    return _result(_ray_operator(tails.schemes, p, alpha, t, grid, farfield, _node_list(grid, node)), grid, node)


def build_J_single_tail_polar(tails: kn.PolarTailKernel, p, alpha, t, grid, node=None, farfield=None):
    if tails.order != "single":
        raise ConfigurationError("polar tables are not single tails")
    if abs(tails.dz - grid.dx) > 1e-12 * grid.dx:
        raise ConfigurationError("weight tables were built for a different dx")
    return _result(_ray_operator(tails.schemes, p, alpha, t, grid, farfield, _node_list(grid, node)), grid, node)


def build_J_double_tail_1d(tails: kn.DoubleTailKernel1D, p, alpha, t, grid, node=None, farfield=None):
    m = tails.dz / grid.dx
    if abs(m - round(m)) > 1e-9:
        raise ConfigurationError("double-tail lattice step is not a multiple of dx")
    return _result(_ray_operator(tails.schemes, p, alpha, t, grid, farfield, _node_list(grid, node)), grid, node)


def build_J_double_tail_polar(tails: kn.PolarTailKernel, p, alpha, t, grid, node=None, farfield=None):
    if tails.order != "double":
        raise ConfigurationError("polar tables are not double tails")
    return _result(_ray_operator(tails.schemes, p, alpha, t, grid, farfield, _node_list(grid, node)), grid, node)


def drift_stencil(bvec, grid: Grid, node=None, farfield=None):
    """Upwind stencil for bvec . D phi; bvec is (N,) for one node or (n, N)."""
    if node is not None:
        flat = grid.node_index(node)
        return drift_operator(grid, np.reshape(bvec, (1, grid.dim)), farfield, nodes=[flat]).stencil(flat)
    return drift_operator(grid, bvec, farfield)


class JumpDiscretization:
    """Kernel preprocessing done once per (kernel, grid); assembles the full
    jump operator (rays plus drift correction) per control and time."""

    def __init__(self, kern: LevyKernel, grid: Grid, trunc_tol=1e-10, dz=None, sphere_nodes=32,
                 sphere_rule=None, quad=None, mode="lumped", drift_tol=1e-10):
        self.kernel, self.grid = kern, grid
        self.trunc_tol, self.drift_tol = trunc_tol, drift_tol
        self.sphere_nodes, self.sphere_rule = sphere_nodes, sphere_rule
        if kern.dim != grid.dim:
            raise ConfigurationError("kernel dimension must match the grid dimension")
        M = kern.dim
        self._cache = {}
        if kern.name == "zero":
            self.regime, self.schemes, self.tails, self.dz = "none", [], None, dz or grid.dx
            return
        if kern.kind == "finite":
            self.regime = "finite"
            if quad is not None:
                self.schemes = kn.quadrature_schemes(*quad)
            else:
                self.schemes, _, _ = kn.build_finite(kern, grid.dx, trunc_tol, dz, sphere_nodes, sphere_rule)
            self.tails = None
        elif kern.kind == "singular_gamma_lt_1":
            self.regime = "single"
            if M == 1:
                self.tails, _ = kn.build_single_tail(kern, grid.dx, trunc_tol)
            else:
                self.tails, _ = kn.build_polar_tails(kern, grid.dx, sphere_nodes, "single", trunc_tol,
                                                     rule=sphere_rule)
            self.schemes = list(self.tails.schemes)
        else:
            self.regime = "double"
            if M == 1:
                self.tails, _ = kn.build_double_tail(kern, grid.dx, trunc_tol, dz, mode)
            else:
                self.tails, _ = kn.build_polar_tails(kern, grid.dx, sphere_nodes, "double", trunc_tol,
                                                     dz=dz, rule=sphere_rule, mode=mode)
            self.schemes = list(self.tails.schemes)
        self.dz = getattr(self.tails, "dz", dz or grid.dx)
        self._cache = {}

    def drift(self, p, alpha, t, X) -> np.ndarray:
        """Vector multiplying D phi in the decomposition, per row of X."""
        if self.regime == "none":
            return np.zeros((len(X), p.dim_x))
        kw = dict(tol=self.drift_tol, sphere_nodes=self.sphere_nodes, rule=self.sphere_rule)
        if self.regime == "double":
            return (-kn.drift_correction_btilde(self.kernel, p, alpha, t, X, **kw)
                    + kn.far_moment(self.kernel, p, alpha, t, X, **kw))
        return -kn.drift_correction_bbar(self.kernel, p, alpha, t, X, **kw)

    def assemble(self, p: ControlProblem, alpha: int, t: float, farfield: Farfield | None,
                 nodes=None, include_drift=True) -> Operator:
        key = (id(p), alpha, None if not p.time_dependent else t, id(farfield),
               None if nodes is None else tuple(np.atleast_1d(nodes)), include_drift)
        if key in self._cache:
            return self._cache[key]
        op = _ray_operator(self.schemes, p, alpha, t, self.grid, farfield, nodes)
        if include_drift:
            idx = np.arange(self.grid.size) if nodes is None else np.atleast_1d(nodes)
            X = self.grid.multi_index(idx) * self.grid.dx
            b = self.drift(p, alpha, t, X)
            if np.any(b != 0) and len(self.schemes):
                dop = drift_operator(self.grid, b, farfield, nodes=idx)
                op = op.combine(dop)
        self._cache[key] = op
        return op

    def stencil(self, p, alpha, t, node, farfield=None, include_drift=True) -> Stencil:
        flat = self.grid.node_index(node)
        return self.assemble(p, alpha, t, farfield, nodes=[flat], include_drift=include_drift).stencil(flat)

"""Kushner-type monotone stencil for tr(a D^2 phi) + b . D phi."""
from __future__ import annotations

import numpy as np

from .errors import MonotonicityError
from .lattice import Farfield, Grid
from .problem import ControlProblem
from .stencil import Operator, Stencil, _node_or_minus, assemble


def local_weights(a, b, dx):
    """Offsets and weights for one diffusion matrix a (N, N) and drift b (N,).

    Axis neighbours get (a_ii - sum_{j!=i} |a_ij|) / dx^2 + b_i^(+/-) / dx;
    the diagonal neighbour pairs +-(e_i + e_j) get a_ij^+ / dx^2 and
    +-(e_i - e_j) get a_ij^- / dx^2.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    N = len(b)
    offs, ws = [], []
    for i in range(N):
        e = np.zeros(N, dtype=np.int64)
        e[i] = 1
        axis = (a[i, i] - (np.abs(a[i]).sum() - abs(a[i, i]))) / dx**2
        offs += [e, -e]
        ws += [axis + max(b[i], 0.0) / dx, axis + max(-b[i], 0.0) / dx]
        for j in range(i + 1, N):
            f = np.zeros(N, dtype=np.int64)
            f[j] = 1
            plus, minus = max(a[i, j], 0.0) / dx**2, max(-a[i, j], 0.0) / dx**2
            offs += [e + f, -e - f, e - f, -e + f]
            ws += [plus, plus, minus, minus]
    return np.array(offs), np.array(ws)


def check_dominance(A, multi, tol=1e-12):
    """Raise MonotonicityError at the first node where a is not diagonally dominant."""
    diag = np.einsum("nii->ni", A)
    off = np.abs(A).sum(axis=2) - np.abs(diag)
    slack = diag - off
    scale = np.maximum(np.abs(A).max(axis=(1, 2)), 1e-300)
    bad = np.nonzero((slack < -tol * scale[:, None]).any(axis=1))[0]
    if len(bad):
        k = bad[0]
        raise MonotonicityError(f"diffusion matrix not diagonally dominant at node {tuple(multi[k])}: "
                                f"{A[k].tolist()}", node=tuple(multi[k]), matrix=A[k])


def build_L(p: ControlProblem, alpha: int, t: float, grid: Grid, farfield: Farfield | None = None,
            nodes=None, include_drift=True) -> Operator:
    n, N, dx = grid.size, grid.dim, grid.dx
    nodes = np.arange(n) if nodes is None else np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    multi = grid.multi_index(nodes)
    X = multi * dx
    A = p.diffusion(alpha, t, X)
    B = p.eval("drift", alpha, t, X) if include_drift else np.zeros((len(nodes), N))
    check_dominance(A, multi)
    rows, tn, tp, ws = [], [], [], []
    # weights are affine in (a, b), so evaluate the offset pattern per node
    for k in range(len(nodes)):
        offs, w = local_weights(A[k], B[k], dx)
        w = np.maximum(w, 0.0)  # dominance checked above, clip roundoff only
        tgt = multi[k] + offs
        rows.append(np.full(len(w), nodes[k]))
        ws.append(w)
        tn.append(_node_or_minus(grid, tgt))
        tp.append(tgt * dx)
    return assemble(grid, np.concatenate(rows), (np.concatenate(tn), np.concatenate(tp)),
                    np.concatenate(ws), farfield, on_grid=True)


def local_stencil(p, alpha, t, grid, node, farfield=None) -> Stencil:
    flat = grid.node_index(node)
    return build_L(p, alpha, t, grid, farfield, nodes=[flat]).stencil(flat)

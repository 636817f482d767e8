"""Switching-system approximation of the Bellman equation.

Component i uses only the controls of its block A_i and may switch to any
other component at cost k:

    max{ v_i,t + sup_{a in A_i}(...) ; v_i - min_{j != i}(v_j + k) } = 0.

Discretely each step advances every component with the scalar scheme
restricted to its block and then projects v_i <- min(v_i, min_{j!=i} v_j + k).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .lattice import Farfield, Grid, write_csv
from .nonlocal_ops import JumpDiscretization
from .problem import ControlProblem, LevyKernel
from .stepper import BellmanScheme, SchemeConfig, Solution


@dataclass(frozen=True)
class SwitchingProblem:
    base: ControlProblem
    partition: tuple          # blocks of control labels or indices
    switch_cost: float

    def __post_init__(self):
        if not self.switch_cost > 0:
            raise ConfigurationError("switch_cost must be positive")
        blocks = tuple(tuple(self.base.control_index(a) if not isinstance(a, (int, np.integer)) else int(a)
                             for a in block) for block in self.partition)
        if any(not b for b in blocks):
            raise ConfigurationError("empty block in partition")
        if set().union(*map(set, blocks)) != set(range(self.base.n_controls)):
            raise ConfigurationError("partition must cover every control")
        if len(blocks) > 8:
            raise ConfigurationError("at most 8 components are supported")
        object.__setattr__(self, "partition", blocks)

    @property
    def m(self) -> int:
        return len(self.partition)


def project(V: np.ndarray, k: float) -> np.ndarray:
    """v_i <- min(v_i, min_{j != i} v_j + k), all components at once."""
    m = V.shape[0]
    if m == 1:
        return V.copy()
    order = np.sort(V, axis=0)
    lowest, second = order[0], order[1]
    # the smallest other component is the overall min unless v_i is that min
    is_min = V == lowest[None, :]
    other = np.where(is_min, second[None, :], lowest[None, :])
    return np.minimum(V, other + k)


@dataclass
class SwitchingSolution:
    grid: Grid
    dt: float
    times: np.ndarray
    V: np.ndarray                     # (m, n) final components
    trajectory: list | None
    spread: list                      # per step max_i v_i - min_j v_j
    switch_cost: float

    @property
    def max_spread(self) -> float:
        return max(self.spread) if self.spread else 0.0

    def to_csv(self, path):
        pts = self.grid.points()
        header = [f"x{k + 1}" for k in range(self.grid.dim)] + [f"v{i + 1}" for i in range(self.V.shape[0])]
        write_csv(path, header, np.column_stack([pts, self.V.T]))


def solve_switching(sw: SwitchingProblem, kern: LevyKernel | None, grid: Grid, cfg: SchemeConfig,
                    farfield: Farfield | None = None, keep=False, jump: JumpDiscretization | None = None,
                    backend=None, **jump_opts) -> SwitchingSolution:
    p = sw.base
    if jump is None and kern is not None:
        jump = JumpDiscretization(kern, grid, **jump_opts)
    schemes = [BellmanScheme(p, kern, grid, cfg, farfield, jump=jump, controls=block) for block in sw.partition]
    dt = min(s.time_step() for s in schemes)
    steps = int(round(p.horizon / dt))
    g = p.g(schemes[0].X)
    V = np.tile(np.asarray(g, dtype=float), (sw.m, 1))
    prev = [s.level(0.0) for s in schemes]
    traj = [V.copy()] if keep else None
    spread = []
    for n in range(1, steps + 1):
        t = n * dt
        nxt = np.empty_like(V)
        for i, s in enumerate(schemes):
            nxt[i], _, _, _, _, prev[i] = s.step(V[i], prev[i], t, dt, backend)
        V = project(nxt, sw.switch_cost)
        spread.append(float((V.max(axis=0) - V.min(axis=0)).max()))
        if keep:
            traj.append(V.copy())
    return SwitchingSolution(grid, dt, dt * np.arange(steps + 1), V, traj, spread, sw.switch_cost)


@dataclass
class GapRow:
    k: float
    gap: float            # max_i sup |v_i - U|
    lower: float          # min_i inf (v_i - U)
    spread: float


@dataclass
class GapStudy:
    rows: list
    exponent: float | None
    scalar: Solution = field(repr=False, default=None)

    @property
    def monotone(self) -> bool:
        """Gap non-increasing as k decreases."""
        ks = sorted(self.rows, key=lambda r: -r.k)
        return all(b.gap <= a.gap * (1 + 1e-12) + 1e-14 for a, b in zip(ks, ks[1:]))

    def to_csv(self, path):
        write_csv(path, ["k", "gap", "min_v_minus_u", "spread"],
                  [[r.k, r.gap, r.lower, r.spread] for r in self.rows]
                  + [["fitted_exponent", self.exponent if self.exponent is not None else "nan", "", ""]])


def switching_gap_study(base: ControlProblem, partition, ks, kern: LevyKernel | None, grid: Grid,
                        cfg: SchemeConfig, farfield: Farfield | None = None, scalar: Solution | None = None,
                        **jump_opts) -> GapStudy:
    jump = JumpDiscretization(kern, grid, **jump_opts) if kern is not None else None
    if scalar is None:
        scalar = BellmanScheme(base, kern, grid, cfg, farfield, jump=jump).run(keep=False)
    rows = []
    for k in ks:
        sol = solve_switching(SwitchingProblem(base, partition, float(k)), kern, grid, cfg, farfield, jump=jump)
        D = sol.V - scalar.U[None, :]
        rows.append(GapRow(float(k), float(np.abs(D).max()), float(D.min()), sol.max_spread))
    exponent = None
    good = [r for r in rows if r.gap > 0]
    if len(good) >= 2:
        from .harness import estimate_order
        exponent = estimate_order([(r.k, r.gap) for r in good], min_levels=2).slope
    return GapStudy(rows, exponent, scalar)

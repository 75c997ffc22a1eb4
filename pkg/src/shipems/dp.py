"""Deterministic dynamic programming benchmark with full knowledge of the profile.

The oracle controls all clusters uniformly (one setpoint) on a grid of
setpoints and SOC values.  Setpoint transitions land exactly on the grid
(action steps are multiples of the setpoint spacing), so only the value
function's SOC axis is interpolated.  Stage costs come from the same kernel
the simulator uses.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .config import DpConfig, ShipConfig
from .env import CostBreakdown, ShipEnv, port_phase, simulate_step, write_trajectory_csv
from .profiles import LoadProfile

ENUMERATION_LIMIT = 10**6


class NoFeasiblePolicyError(RuntimeError):
    """Every action sequence from the start state violates a constraint."""


@dataclass(frozen=True)
class DpGrid:
    soc_levels: int = 201
    x_levels: int = 101
    action_levels: int = 9
    soc_bounds: tuple[float, float] | None = None  # defaults to (terminate floor, soc_max)
    m_effective: int = 1

    def __post_init__(self):
        if self.action_levels < 1:
            raise ValueError("empty action grid")
        if self.action_levels % 2 == 0:
            raise ValueError("action_levels must be odd so the grid is symmetric and contains 0")
        if self.soc_levels < 2 or self.x_levels < 2:
            raise ValueError("need at least two SOC and two setpoint levels")
        if self.m_effective != 1:
            raise ValueError("the oracle supports uniform control only (m_effective = 1)")

    @classmethod
    def from_config(cls, dp: DpConfig) -> DpGrid:
        return cls(dp.soc_levels, dp.x_levels, dp.action_levels)

    def soc_grid(self, cfg: ShipConfig) -> np.ndarray:
        lo, hi = self.soc_bounds or (cfg.soc_terminate_floor, cfg.soc_max)
        if not lo < hi:
            raise ValueError("SOC grid bounds must be increasing")
        return np.linspace(lo, hi, self.soc_levels)

    def x_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.x_levels)

    def actions(self, cfg: ShipConfig) -> np.ndarray:
        if self.action_levels == 1:
            return np.zeros(1)
        return np.linspace(-cfg.action_limit, cfg.action_limit, self.action_levels)

    def offsets(self, cfg: ShipConfig) -> np.ndarray:
        """Action grid expressed as integer moves on the setpoint grid."""
        dx = 1.0 / (self.x_levels - 1)
        steps = self.actions(cfg) / dx
        offs = np.rint(steps)
        if np.max(np.abs(steps - offs)) > 1e-9:
            raise ValueError("every action level must be a whole number of setpoint grid steps")
        return offs.astype(np.int32)


@dataclass
class DpSolution:
    optimal_cost: float
    values: np.ndarray = field(repr=False)
    policy: np.ndarray = field(repr=False)  # index into the action grid, -1 where infeasible
    actions: np.ndarray = field(repr=False)
    x_grid: np.ndarray = field(repr=False)
    soc_grid: np.ndarray = field(repr=False)
    trajectory: list[dict] = field(repr=False)
    trajectory_cost: CostBreakdown
    log_rows: list[list] = field(repr=False)
    runtime_s: float = 0.0
    grid: DpGrid = field(default_factory=DpGrid)
    penalty: float = 0.0

    def action_at(self, t: int, x: float, soc: float) -> float:
        """Nearest-node policy lookup (for inspection; the forward pass re-optimises exactly)."""
        ix = int(np.argmin(np.abs(self.x_grid - x)))
        isoc = int(np.argmin(np.abs(self.soc_grid - soc)))
        j = self.policy[t, ix, isoc]
        return float(self.actions[j]) if j >= 0 else math.nan

    def summary(self) -> dict:
        return {
            "optimal_cost": self.optimal_cost,
            "trajectory_cost": self.trajectory_cost.total(),
            "cost_breakdown": asdict(self.trajectory_cost),
            "grid": {k: v for k, v in asdict(self.grid).items()},
            "runtime_s": self.runtime_s,
        }

    def write(self, out_dir: str | Path, stem: str = "dp") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out / f"{stem}_trajectory.csv", 1, self.log_rows)
        (out / f"{stem}_summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def terminal_values(cfg: ShipConfig, physics: K.Physics, x_grid, soc_grid, port_demand, penalty: float):
    port = K.port_cost_grid(physics.params, physics.eff_x, physics.eff_eta, physics.conv,
                            x_grid, soc_grid, np.ascontiguousarray(port_demand, dtype=np.float64))
    return port + penalty * np.maximum(0.0, cfg.soc_min - soc_grid)[None, :]


def _start_index(x_grid: np.ndarray, x0: float) -> int:
    ix = int(np.argmin(np.abs(x_grid - x0)))
    if abs(x_grid[ix] - x0) > 1e-12:
        raise ValueError(f"initial setpoint {x0} is not on the setpoint grid")
    return ix


def solve(profile: LoadProfile, cfg: ShipConfig, grid: DpGrid | None = None,
          shortfall_penalty: float = DpConfig.shortfall_penalty) -> DpSolution:
    """Backward value iteration over the sailing steps, then an exact forward rollout.

    The terminal value is the port-phase cost from each arrival node plus a
    linear penalty on SOC below ``soc_min``.  Infeasible transitions are +inf.
    The forward pass re-optimises a one-step lookahead at the exact
    (off-grid) SOC and replays the chosen actions through :class:`ShipEnv`.
    """
    t0 = time.perf_counter()
    grid = grid or DpGrid()
    ucfg = cfg.uniform()
    ph = K.pack(ucfg)
    x_grid = grid.x_grid()
    soc_grid = grid.soc_grid(ucfg)
    offsets = grid.offsets(ucfg)
    actions = grid.actions(ucfg)
    n_sail = profile.sailing_steps
    p_sail = np.ascontiguousarray(profile.sailing_demand, dtype=np.float64)
    v_term = terminal_values(ucfg, ph, x_grid, soc_grid, profile.port_demand, shortfall_penalty)
    V, policy = K.dp_backward(ph.params, ph.eff_x, ph.eff_eta, ph.conv, x_grid, soc_grid, offsets, p_sail,
                              np.ascontiguousarray(v_term))
    ix0 = _start_index(x_grid, ucfg.initial_x)
    ns = soc_grid.shape[0]
    v0 = float(V[0, ix0, ns - 1]) if abs(soc_grid[-1] - ucfg.soc_max) < 1e-12 else float(
        K.interp_soc(V[0, ix0], ucfg.soc_max, soc_grid[0], (soc_grid[-1] - soc_grid[0]) / (ns - 1), ns))
    if not math.isfinite(v0):
        raise NoFeasiblePolicyError(f"profile {profile.id}: no feasible policy from the start state")

    lo = soc_grid[0]
    h = (soc_grid[-1] - soc_grid[0]) / (ns - 1)
    env = ShipEnv(ucfg, protect=False, record=True)
    state = env.reset(profile)
    ix = ix0
    trajectory = []
    for t in range(n_sail):
        best, best_j = math.inf, -1
        x_prev = x_grid[ix:ix + 1]
        for j, off in enumerate(offsets):
            ix2 = ix + int(off)
            if ix2 < 0 or ix2 >= x_grid.shape[0]:
                continue
            out = K.step(ph.params, ph.eff_x, ph.eff_eta, ph.conv, x_prev, x_grid[ix2:ix2 + 1], state.soc,
                         p_sail[t], 0, 1)
            if out[K.O_INFEASIBLE]:
                continue
            cand = (out[K.O_CB] + out[K.O_CF] + out[K.O_CH2] + out[K.O_CE]) + float(
                K.interp_soc(V[t + 1, ix2], out[K.O_SOC], lo, h, ns))
            if cand < best:
                best, best_j = cand, j
        if best_j < 0:
            raise NoFeasiblePolicyError(f"profile {profile.id}: forward pass dead-ends at step {t}")
        a = float(actions[best_j])
        trajectory.append({"t": t, "x": x_grid[ix], "soc": state.soc, "action": a, "value": best})
        ix = ix + int(offsets[best_j])
        state = env.step_to([x_grid[ix]]).next_state
    penalty = shortfall_penalty * max(0.0, ucfg.soc_min - state.soc)
    env.step([0.0])  # port phase
    cost = env.episode_cost
    return DpSolution(
        optimal_cost=v0,
        values=V,
        policy=policy,
        actions=actions,
        x_grid=x_grid,
        soc_grid=soc_grid,
        trajectory=trajectory,
        trajectory_cost=cost,
        log_rows=env.log,
        runtime_s=time.perf_counter() - t0,
        grid=grid,
        penalty=penalty,
    )


def enumerate_optimal(profile: LoadProfile, cfg: ShipConfig, grid: DpGrid | None = None,
                      shortfall_penalty: float = DpConfig.shortfall_penalty) -> float:
    """Exhaustive minimum of the DP objective over every discrete action sequence.

    Each sequence is simulated with the simulator's exact step (no grid, no
    interpolation).  Sequences that clamp a setpoint or violate a constraint
    are discarded, matching the oracle's feasible set.  Stage costs are
    accumulated from the last step backwards, the association the backward
    recursion uses, so agreement on exactly representable instances is exact.
    """
    grid = grid or DpGrid()
    ucfg = cfg.uniform()
    ph = K.pack(ucfg)
    actions = grid.actions(ucfg)
    n_sail = profile.sailing_steps
    if len(actions) ** n_sail > ENUMERATION_LIMIT:
        raise ValueError(f"instance too large: {len(actions)}^{n_sail} sequences")
    demand = profile.sailing_demand
    port = profile.port_demand
    best = math.inf
    for seq in itertools.product(range(len(actions)), repeat=n_sail):
        x = ucfg.initial_x
        soc = ucfg.soc_max
        totals = []
        ok = True
        for t, j in enumerate(seq):
            x_new = x + actions[j]
            if x_new < 0.0 or x_new > 1.0:
                ok = False
                break
            flow, cost = simulate_step([x], [x_new], soc, demand[t], 0, ucfg, physics=ph)
            if flow.infeasible:
                ok = False
                break
            totals.append(cost.total())
            x, soc = x_new, flow.soc_next
        if not ok:
            continue
        port_total = 0.0
        for _, cost in port_phase([x], soc, port, ucfg, ph):
            port_total = port_total + cost.total()
        obj = port_total + shortfall_penalty * max(0.0, ucfg.soc_min - soc)
        for c in reversed(totals):
            obj = c + obj
        best = min(best, obj)
    return best

"""Episodic simulator of the plug-in hybrid PEMFC/battery propulsion plant.

One step is one ``step_seconds`` interval.  The agent sees the demand of the
current interval, picks per-cluster setpoint adjustments, and the adjusted
setpoints serve that demand; the battery covers the residual.  When the
profile reaches its port segment the whole port phase (fuel cells off, shore
charging back to ``soc_max``) is simulated in one agent step and the summed
port reward is returned with ``end_of_episode``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels as K
from .config import ShipConfig
from .profiles import LoadProfile

COST_FLOOR = 1e-9
_BELOW_ONE = math.nextafter(1.0, 0.0)


class EpisodeTerminatedError(RuntimeError):
    """Raised when ``step`` is called after the episode has ended."""


class TerminationReason(str, enum.Enum):
    NONE = "none"
    SOC_FLOOR = "soc_floor"
    INFEASIBLE = "infeasible"
    END_OF_EPISODE = "end_of_episode"


@dataclass(frozen=True)
class SystemState:
    x: tuple[float, ...]
    soc: float
    spa: int
    p_dem: float

    def __post_init__(self):
        if any(not 0.0 <= v <= 1.0 for v in self.x):
            raise ValueError(f"cluster setpoints must lie in [0, 1], got {self.x}")
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"soc must lie in [0, 1], got {self.soc}")
        if self.spa not in (0, 1):
            raise ValueError("spa must be 0 or 1")
        if self.p_dem < 0:
            raise ValueError("p_dem must be non-negative")

    def flat(self) -> np.ndarray:
        """Raw state vector ``[x_1..x_m, soc, spa, p_dem]`` (length m+3)."""
        return np.array([*self.x, self.soc, float(self.spa), self.p_dem])

    def observation(self, cfg: ShipConfig) -> np.ndarray:
        """Network input: the flat state with demand scaled by the plant ceiling."""
        obs = self.flat()
        obs[-1] /= cfg.demand_scale_kw
        return obs


@dataclass(frozen=True)
class CostBreakdown:
    c_b: float = 0.0
    c_f: float = 0.0
    c_h: float = 0.0
    c_e: float = 0.0
    gwp_kg: float = 0.0

    def total(self) -> float:
        return self.c_b + self.c_f + self.c_h + self.c_e

    def __add__(self, other: CostBreakdown) -> CostBreakdown:
        return CostBreakdown(
            self.c_b + other.c_b,
            self.c_f + other.c_f,
            self.c_h + other.c_h,
            self.c_e + other.c_e,
            self.gwp_kg + other.gwp_kg,
        )


@dataclass(frozen=True)
class PowerFlow:
    """Power split of one step [kW]; ``p_dem = p1 + discharge - charge - curtailed + shore + unmet``."""

    p1: float
    discharge: float
    charge: float
    curtailed: float
    shore: float
    unmet: float
    soc_next: float
    h2_kg: float
    infeasible: bool

    @property
    def batt_kw(self) -> float:
        return self.discharge - self.charge

    def balance_residual(self, p_dem: float) -> float:
        return p_dem - (self.p1 + self.discharge - self.charge - self.curtailed + self.shore + self.unmet)


@dataclass(frozen=True)
class StepOutcome:
    next_state: SystemState
    reward: float
    cost: CostBreakdown
    terminated: bool
    truncated_reason: TerminationReason
    overridden: tuple[bool, ...]
    flows: tuple[PowerFlow, ...] = field(default=(), repr=False)


def _unpack(out: np.ndarray) -> tuple[PowerFlow, CostBreakdown]:
    flow = PowerFlow(
        p1=float(out[K.O_P1]),
        discharge=float(out[K.O_DIS]),
        charge=float(out[K.O_CH]),
        curtailed=float(out[K.O_CURT]),
        shore=float(out[K.O_SHORE]),
        unmet=float(out[K.O_UNMET]),
        soc_next=float(out[K.O_SOC]),
        h2_kg=float(out[K.O_H2KG]),
        infeasible=bool(out[K.O_INFEASIBLE]),
    )
    cost = CostBreakdown(
        float(out[K.O_CB]), float(out[K.O_CF]), float(out[K.O_CH2]), float(out[K.O_CE]), float(out[K.O_GWP])
    )
    return flow, cost


def simulate_step(
    x_prev: Sequence[float],
    x_new: Sequence[float],
    soc: float,
    p_dem: float,
    spa: int,
    cfg: ShipConfig,
    port_left: int = 1,
    physics: K.Physics | None = None,
) -> tuple[PowerFlow, CostBreakdown]:
    """Power split and costs for one interval with setpoints moving ``x_prev -> x_new``."""
    ph = physics or K.pack(cfg)
    out = K.step(ph.params, ph.eff_x, ph.eff_eta, ph.conv, np.asarray(x_prev, float), np.asarray(x_new, float),
                 float(soc), float(p_dem), int(spa), int(port_left))
    return _unpack(out)


def total_converter_power(state: SystemState, cfg: ShipConfig) -> float:
    """Fuel-cell power delivered after the uni-directional converters [kW]."""
    pc = cfg.cluster_power_kw
    p1 = 0.0
    for xk, eta in zip(state.x, cfg.converter_efficiencies):
        p1 += pc * xk * eta
    return p1


def apply_action(state: SystemState, action: Sequence[float], cfg: ShipConfig) -> tuple[np.ndarray, tuple[bool, ...]]:
    """Add the adjustments to the setpoints, clamping into [0, 1] and flagging clamped clusters."""
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (cfg.n_clusters,):
        raise ValueError(f"action must have shape ({cfg.n_clusters},), got {a.shape}")
    cand = np.asarray(state.x) + a
    clipped = np.clip(cand, 0.0, 1.0)
    return clipped, tuple(bool(v) for v in (cand != clipped))


def battery_power(state: SystemState, p1: float, cfg: ShipConfig) -> tuple[float, float]:
    """Battery power (positive = discharge) and next SOC for a given converter output ``p1``.

    Evaluates the battery branch of the step kernel with a single lossless
    virtual source delivering exactly ``p1``.
    """
    if p1 < 0:
        raise ValueError("p1 must be non-negative")
    ph = K.pack(cfg)
    params = ph.params.copy()
    params[K.P_CLUSTER] = p1
    params[K.SHARE] = 0.0
    one = np.ones(1)
    out = K.step(params, ph.eff_x, ph.eff_eta, one, one, one, float(state.soc), float(state.p_dem), state.spa, 1)
    return float(out[K.O_DIS] - out[K.O_CH]), float(out[K.O_SOC])


def step_costs(
    x_prev: Sequence[float], state: SystemState, cfg: ShipConfig, port_left: int = 1
) -> CostBreakdown:
    """Cost of holding setpoints ``state.x`` (reached from ``x_prev``) for one interval."""
    return simulate_step(x_prev, state.x, state.soc, state.p_dem, state.spa, cfg, port_left)[1]


def port_phase(
    x_arrive: Sequence[float],
    soc: float,
    port_demand: Sequence[float],
    cfg: ShipConfig,
    physics: K.Physics | None = None,
) -> list[tuple[PowerFlow, CostBreakdown]]:
    """Simulate the port segment: clusters switched off, shore charging spread over the stay."""
    ph = physics or K.pack(cfg)
    x_prev = np.asarray(x_arrive, dtype=np.float64)
    zero = np.zeros(cfg.n_clusters)
    n_port = len(port_demand)
    steps = []
    for n, p_dem in enumerate(port_demand):
        out = K.step(ph.params, ph.eff_x, ph.eff_eta, ph.conv, x_prev, zero, soc, float(p_dem), 1, n_port - n)
        flow, cost = _unpack(out)
        steps.append((flow, cost))
        soc = flow.soc_next
        x_prev = zero
    return steps


def max_power_feasible(profile: LoadProfile, cfg: ShipConfig) -> bool:
    """True when ramping every cluster at the action limit keeps SOC at or above ``soc_min``.

    No policy can end a sailing segment with more energy in the battery, so a
    profile failing this test cannot be sailed within the SOC window.
    """
    env = ShipEnv(cfg)
    env.reset(profile)
    up = np.full(cfg.n_clusters, cfg.action_limit)
    while env.state.spa == 0:
        out = env.step(up)
        if out.flows[0].infeasible or out.next_state.soc < cfg.soc_min:
            return False
    return True


def tanh_term(cost: float) -> float:
    """``tanh(1/cost)`` with the cost floored and the result kept strictly below 1."""
    return min(math.tanh(1.0 / max(cost, COST_FLOOR)), _BELOW_ONE)


def reward(
    spa: int,
    infeasible: bool,
    overridden: Sequence[bool],
    cost_now: float,
    port_costs: Sequence[float] | None = None,
) -> float:
    if spa == 1:
        if port_costs is None:
            raise ValueError("port_costs required in port mode")
        return float(sum(tanh_term(c) for c in port_costs))
    if infeasible or any(overridden):
        return -1.0
    return tanh_term(cost_now)


LOG_FIXED = ["t", "p_dem"]


def log_header(m: int) -> list[str]:
    return [*LOG_FIXED, *(f"x_{k + 1}" for k in range(m)), "soc", "spa", "batt_kw",
            "c_b", "c_f", "c_h", "c_e", "reward", "overridden_mask"]


class ShipEnv:
    """Gym-style environment over a :class:`LoadProfile`.

    ``protect=True`` enables the battery over-discharge protection used in
    evaluation: when a step would take SOC below ``soc_min`` (or exceed the
    discharge limit) every cluster is raised by a common amount, ignoring the
    ramp limit, just enough to stay feasible.  Raised clusters are flagged as
    overridden.
    """

    def __init__(self, cfg: ShipConfig, protect: bool = False, record: bool = False):
        self.cfg = cfg
        self.protect = protect
        self.record = record
        self.physics = K.pack(cfg)
        self.profile: LoadProfile | None = None
        self.state: SystemState | None = None
        self.t = 0
        self.done = True
        self.episode_cost = CostBreakdown()
        self.log: list[list] = []

    def reset(self, profile: LoadProfile) -> SystemState:
        if len(profile.samples) == 0:
            raise ValueError("empty profile")
        if abs(profile.step_seconds - self.cfg.step_seconds) > 1e-9:
            raise ValueError("profile step length differs from the plant step length")
        self.profile = profile
        self.t = 0
        self.done = False
        self.episode_cost = CostBreakdown()
        self.log = []
        p_dem, spa = profile.samples[0]
        self.state = SystemState((self.cfg.initial_x,) * self.cfg.n_clusters, self.cfg.soc_max, spa, p_dem)
        return self.state

    def _run(self, x_prev, x_new, soc, p_dem, spa, port_left=1):
        ph = self.physics
        out = K.step(ph.params, ph.eff_x, ph.eff_eta, ph.conv, x_prev, x_new, soc, p_dem, spa, port_left)
        return out

    def _protect(self, x_prev: np.ndarray, x_new: np.ndarray, soc: float, p_dem: float):
        cfg = self.cfg

        target = min(cfg.soc_min, soc)

        def ok(out):
            return out[K.O_SOC] >= target and out[K.O_DIS] <= cfg.battery.max_discharge_kw

        out = self._run(x_prev, x_new, soc, p_dem, 0)
        if ok(out):
            return x_new, out
        top = np.ones_like(x_new)
        out_top = self._run(x_prev, top, soc, p_dem, 0)
        if not ok(out_top):
            return top, out_top
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ok(self._run(x_prev, np.minimum(x_new + mid, 1.0), soc, p_dem, 0)):
                hi = mid
            else:
                lo = mid
        raised = np.minimum(x_new + hi, 1.0)
        return raised, self._run(x_prev, raised, soc, p_dem, 0)

    def step(self, action: Sequence[float]) -> StepOutcome:
        if self.done or self.state is None:
            raise EpisodeTerminatedError("episode has terminated; call reset()")
        if self.state.spa == 1:
            return self._port_phase()
        x_new, overridden = apply_action(self.state, action, self.cfg)
        return self._sail(x_new, overridden)

    def step_to(self, setpoints: Sequence[float]) -> StepOutcome:
        """Sailing step to explicit setpoints (used by the oracle to avoid drift from ``x + a``)."""
        if self.done or self.state is None:
            raise EpisodeTerminatedError("episode has terminated; call reset()")
        if self.state.spa == 1:
            return self._port_phase()
        x_new = np.asarray(setpoints, dtype=np.float64)
        if x_new.shape != (self.cfg.n_clusters,) or np.any((x_new < 0) | (x_new > 1)):
            raise ValueError("setpoints must have one value per cluster in [0, 1]")
        return self._sail(x_new, (False,) * self.cfg.n_clusters)

    def _sail(self, x_new: np.ndarray, overridden: tuple[bool, ...]) -> StepOutcome:
        cfg = self.cfg
        s = self.state
        x_prev = np.asarray(s.x)
        if self.protect:
            x_raised, out = self._protect(x_prev, x_new, s.soc, s.p_dem)
            overridden = tuple(o or bool(r > n) for o, r, n in zip(overridden, x_raised, x_new))
            x_new = x_raised
        else:
            out = self._run(x_prev, x_new, s.soc, s.p_dem, 0)
        flow, cost = _unpack(out)
        r = reward(0, flow.infeasible, overridden, cost.total())
        self.episode_cost = self.episode_cost + cost
        nxt_t = self.t + 1
        reason = TerminationReason.NONE
        if flow.unmet > 0.0:
            reason = TerminationReason.INFEASIBLE
        elif flow.soc_next < cfg.soc_terminate_floor:
            reason = TerminationReason.SOC_FLOOR
        elif nxt_t >= len(self.profile.samples):
            reason = TerminationReason.END_OF_EPISODE
        soc_next = min(max(flow.soc_next, 0.0), 1.0)
        if nxt_t < len(self.profile.samples):
            p_next, spa_next = self.profile.samples[nxt_t]
        else:
            p_next, spa_next = s.p_dem, s.spa
        x_tuple = tuple(float(v) for v in x_new)
        if self.record:
            self._log_row(self.t, s.p_dem, x_tuple, soc_next, 0, flow, cost, r, overridden)
        self.state = SystemState(x_tuple, soc_next, spa_next, p_next)
        self.t = nxt_t
        self.done = reason is not TerminationReason.NONE
        return StepOutcome(self.state, r, cost, self.done, reason, overridden, (flow,))

    def _port_phase(self) -> StepOutcome:
        cfg = self.cfg
        samples = self.profile.samples
        start = self.t
        steps = port_phase(self.state.x, self.state.soc, [p for p, _ in samples[start:]], cfg, self.physics)
        zero = (0.0,) * cfg.n_clusters
        total = CostBreakdown()
        port_costs = []
        for n, (flow, cost) in enumerate(steps):
            total = total + cost
            port_costs.append(cost.total())
            if self.record:
                self._log_row(start + n, samples[start + n][0], zero, min(max(flow.soc_next, 0.0), 1.0), 1,
                              flow, cost, tanh_term(cost.total()), (False,) * cfg.n_clusters)
        r = reward(1, False, (), 0.0, port_costs)
        self.episode_cost = self.episode_cost + total
        self.t = len(samples)
        self.done = True
        soc = min(max(steps[-1][0].soc_next, 0.0), 1.0)
        self.state = SystemState(zero, soc, 1, samples[-1][0])
        return StepOutcome(self.state, r, total, True, TerminationReason.END_OF_EPISODE,
                           (False,) * cfg.n_clusters, tuple(f for f, _ in steps))

    def _log_row(self, t, p_dem, x, soc, spa, flow, cost, r, overridden):
        self.log.append([t, p_dem, *x, soc, spa, flow.batt_kw, cost.c_b, cost.c_f, cost.c_h, cost.c_e, r,
                         "".join("1" if o else "0" for o in overridden)])

    def write_log(self, path: str | Path) -> None:
        write_trajectory_csv(path, self.cfg.n_clusters, self.log)


def write_trajectory_csv(path: str | Path, m: int, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(log_header(m))
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_trajectory_csv(path: str | Path) -> tuple[list[str], list[list]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    parsed = []
    for row in body:
        rec = []
        for name, v in zip(header, row):
            if name == "overridden_mask":
                rec.append(v)
            elif name in ("t", "spa"):
                rec.append(int(v))
            else:
                rec.append(float(v))
        parsed.append(rec)
    return header, parsed


def rollout(env: ShipEnv, profile: LoadProfile, policy) -> tuple[CostBreakdown, float, TerminationReason]:
    """Run ``policy(state) -> action`` for one episode; returns (cost, return, reason)."""
    state = env.reset(profile)
    ret = 0.0
    while True:
        out = env.step(policy(state))
        ret += out.reward
        state = out.next_state
        if out.terminated:
            return env.episode_cost, ret, out.truncated_reason

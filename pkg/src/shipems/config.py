"""Configuration dataclasses and the JSON config file loader.

Every tunable of the simulator, the profile generator, the agent, the
dynamic-programming oracle and the experiment harness lives here so that a
single JSON document reproduces a run.  The schema is documented in
``docs/config.md``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or malformed configuration values."""


@dataclass(frozen=True)
class FcDegradation:
    """Plant-level PEMFC wear prices; each cluster pays its power share."""

    start_cost: float = 12.0  # $ per cold start
    ramp_cost: float = 45.0  # $ per p.u. of setpoint change
    low_power_cost_per_h: float = 150.0  # $/h while 0 < x < low_threshold
    high_power_cost_per_h: float = 60.0  # $/h while x > high_threshold
    low_threshold: float = 0.2
    high_threshold: float = 0.8


@dataclass(frozen=True)
class Prices:
    h2_per_kg: float = 5.0
    elec_per_kwh: float = 0.10
    fc_degradation: FcDegradation = field(default_factory=FcDegradation)
    battery_per_kwh: float = 0.075  # $ per kWh of throughput


@dataclass(frozen=True)
class BatteryLimits:
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    max_charge_kw: float = 3000.0
    max_discharge_kw: float = 3000.0


@dataclass(frozen=True)
class GwpFactors:
    kg_per_kg_h2: float = 0.91
    kg_per_kwh_elec: float = 0.187


DEFAULT_EFFICIENCY_CURVE = (
    (0.0, 0.30),
    (0.05, 0.36),
    (0.2, 0.50),
    (0.5, 0.57),
    (1.0, 0.49),
)


@dataclass(frozen=True)
class ShipConfig:
    """Plug-in hybrid PEMFC/battery plant parameters."""

    rated_fc_power_kw: float = 2940.0
    n_clusters: int = 4
    battery_capacity_kwh: float = 581.0
    soc_bounds: tuple[float, float] = (0.15, 0.95)
    soc_terminate_floor: float = 0.10
    converter_efficiencies: tuple[float, ...] = ()
    action_limit: float = 0.04
    step_seconds: float = 60.0
    initial_x: float = 0.5
    prices: Prices = field(default_factory=Prices)
    gwp_factors: GwpFactors = field(default_factory=GwpFactors)
    battery: BatteryLimits = field(default_factory=BatteryLimits)
    fc_efficiency_curve: tuple[tuple[float, float], ...] = DEFAULT_EFFICIENCY_CURVE
    lhv_h2_kwh_per_kg: float = 33.3
    demand_scale_kw: float = 4370.0

    def __post_init__(self):
        if not self.converter_efficiencies:
            object.__setattr__(self, "converter_efficiencies", (0.97,) * self.n_clusters)
        object.__setattr__(self, "converter_efficiencies", tuple(float(e) for e in self.converter_efficiencies))
        object.__setattr__(self, "soc_bounds", tuple(float(s) for s in self.soc_bounds))
        object.__setattr__(
            self, "fc_efficiency_curve", tuple((float(a), float(b)) for a, b in self.fc_efficiency_curve)
        )
        self.validate()

    def validate(self) -> None:
        if self.rated_fc_power_kw <= 0:
            raise ConfigError("rated_fc_power_kw must be positive")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.battery_capacity_kwh <= 0:
            raise ConfigError("battery_capacity_kwh must be positive")
        soc_min, soc_max = self.soc_bounds
        if not 0.0 <= self.soc_terminate_floor <= soc_min < soc_max <= 1.0:
            raise ConfigError("require 0 <= soc_terminate_floor <= soc_min < soc_max <= 1")
        if self.action_limit <= 0:
            raise ConfigError("action_limit must be positive")
        if len(self.converter_efficiencies) != self.n_clusters:
            raise ConfigError("need one converter efficiency per cluster")
        if any(not 0.0 < e <= 1.0 for e in self.converter_efficiencies):
            raise ConfigError("converter efficiencies must lie in (0, 1]")
        if self.step_seconds <= 0:
            raise ConfigError("step_seconds must be positive")
        if not 0.0 <= self.initial_x <= 1.0:
            raise ConfigError("initial_x must lie in [0, 1]")
        xs = [p[0] for p in self.fc_efficiency_curve]
        if len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("fc_efficiency_curve needs >= 2 points with increasing x")
        if any(p[1] <= 0 for p in self.fc_efficiency_curve):
            raise ConfigError("fc efficiencies must be positive")
        b = self.battery
        if not (0 < b.charge_efficiency <= 1 and 0 < b.discharge_efficiency <= 1):
            raise ConfigError("battery efficiencies must lie in (0, 1]")
        if b.max_charge_kw <= 0 or b.max_discharge_kw <= 0:
            raise ConfigError("battery power limits must be positive")

    @property
    def cluster_power_kw(self) -> float:
        return self.rated_fc_power_kw / self.n_clusters

    @property
    def soc_min(self) -> float:
        return self.soc_bounds[0]

    @property
    def soc_max(self) -> float:
        return self.soc_bounds[1]

    @property
    def state_dim(self) -> int:
        return self.n_clusters + 3

    def uniform(self) -> ShipConfig:
        """The single-cluster equivalent plant (uniform control)."""
        eta = sum(self.converter_efficiencies) / self.n_clusters
        return dataclasses.replace(self, n_clusters=1, converter_efficiencies=(eta,))

    def with_clusters(self, m: int) -> ShipConfig:
        eta = self.converter_efficiencies[0]
        return dataclasses.replace(self, n_clusters=m, converter_efficiencies=(eta,) * m)


@dataclass(frozen=True)
class ProfileConfig:
    """Synthetic voyage generator parameters."""

    sailing_steps: int = 60
    port_steps: int = 15
    step_seconds: float = 60.0
    plant_ceiling_kw: float = 4370.0
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)  # low, moderate, high
    plateau_fraction: dict = field(
        default_factory=lambda: {"low": (0.28, 0.42), "moderate": (0.50, 0.62), "high": (0.755, 0.78)}
    )
    departure_steps: int = 12
    arrival_steps: int = 10
    manoeuvre_start_fraction: float = 0.25
    fluctuation_fraction: float = 0.08
    port_demand_kw: tuple[float, float] = (120.0, 220.0)
    validation_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "class_mix", tuple(float(c) for c in self.class_mix))
        object.__setattr__(
            self, "plateau_fraction", {k: tuple(v) for k, v in dict(self.plateau_fraction).items()}
        )
        object.__setattr__(self, "port_demand_kw", tuple(self.port_demand_kw))


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple[int, ...] = (256, 256)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    exploration_sigma: float = 0.1  # fraction of the action limit
    smoothing_sigma: float = 0.2  # fraction of the action limit
    noise_clip: float = 0.5  # fraction of the action limit
    policy_delay: int = 2
    batch_size: int = 128
    update_interval: int = 1
    warmup_steps: int = 1000
    replay_capacity: int = 1_000_000
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.noise_clip <= 0:
            raise ConfigError("noise_clip must be positive")
        if self.policy_delay < 1 or self.batch_size < 1 or self.update_interval < 1:
            raise ConfigError("policy_delay, batch_size and update_interval must be >= 1")
        if self.replay_capacity < 1:
            raise ConfigError("replay_capacity must be >= 1")


@dataclass(frozen=True)
class DpConfig:
    soc_levels: int = 201
    x_levels: int = 101
    action_levels: int = 9
    shortfall_penalty: float = 1.0e4  # $ per unit SOC below soc_min at arrival


@dataclass(frozen=True)
class RunConfig:
    """Experiment protocol: seeds, budget, evaluation cadence."""

    n_seeds: int = 28
    max_episodes: int = 8000
    eval_every_episodes: int = 100
    eval_voyages: int = 10
    n_clusters: int = 4
    n_profiles: int = 300
    profile_seed: int = 12345
    n_workers: int = 1
    convergence_window: int = 10
    trend_window_episodes: int = 1000
    moving_average_window: int = 100
    unserved_penalty_per_kwh: float = 1.0  # eval cost of sailing demand left unserved by early termination
    output_dir: str = "runs"
    ship: ShipConfig = field(default_factory=ShipConfig)
    profiles: ProfileConfig = field(default_factory=ProfileConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    dp: DpConfig = field(default_factory=DpConfig)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.eval_every_episodes < 1:
            raise ConfigError("eval_every_episodes must be >= 1")
        if self.max_episodes < 1 or self.eval_voyages < 1:
            raise ConfigError("max_episodes and eval_voyages must be >= 1")
        if self.ship.n_clusters != self.n_clusters:
            object.__setattr__(self, "ship", self.ship.with_clusters(self.n_clusters))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(to_dict(self), sort_keys=True).encode()).hexdigest()[:16]


def paper_preset(**overrides) -> RunConfig:
    """28 seeds, 8000 episodes, evaluation every 100 episodes on 10 voyages, m=4."""
    return dataclasses.replace(RunConfig(), **overrides)


def desk_preset(**overrides) -> RunConfig:
    """CI-sized protocol: 5 seeds, 1500 episodes, evaluation every 50 episodes, uniform control."""
    base = RunConfig(
        n_seeds=5,
        max_episodes=1500,
        eval_every_episodes=50,
        eval_voyages=10,
        n_clusters=1,
        n_profiles=150,
        trend_window_episodes=500,
        moving_average_window=5,
        profiles=ProfileConfig(class_mix=(0.5, 0.5, 0.0)),
        td3=Td3Config(batch_size=64, replay_capacity=100_000, warmup_steps=1000),
    )
    return dataclasses.replace(base, **overrides)


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def _coerce(tp: Any, value: Any, where: str) -> Any:
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return from_dict(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple and isinstance(value, (list, tuple)):
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if origin in (typing.Union, types.UnionType):
        return value
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_dict(cls: type, data: dict, where: str = "config") -> Any:
    """Build dataclass ``cls`` from a nested mapping; unknown keys are errors."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path | None = None, preset: str = "desk") -> RunConfig:
    """Load a run config; keys in the file override the named preset."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = to_dict(PRESETS[preset]())
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "preset" in user:
            base = to_dict(PRESETS[user.pop("preset")]())
        base = _merge(base, user)
    # a changed cluster count must reshape the per-cluster efficiency list
    ship = base["ship"]
    if len(ship.get("converter_efficiencies") or ()) != base["n_clusters"]:
        effs = ship.get("converter_efficiencies") or [0.97]
        ship["converter_efficiencies"] = [effs[0]] * base["n_clusters"]
        ship["n_clusters"] = base["n_clusters"]
    return from_dict(RunConfig, base)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "plateau_fraction":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")

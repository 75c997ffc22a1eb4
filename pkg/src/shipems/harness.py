"""Multi-seed training protocol: periodic evaluation, convergence and best-agent selection."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig, ShipConfig, save_config
from .env import CostBreakdown, ShipEnv, TerminationReason, max_power_feasible
from .profiles import LoadProfile, ProfileSet, generate
from .td3 import DIAG_FIELDS, Td3Agent

log = logging.getLogger(__name__)

CURVE_FIELDS = ("episode", "env_steps", "eval_cost", "eval_gwp_kg", "soc_floor_episodes", "overridden_steps")

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VoyageResult:
    profile_id: str
    class_label: str
    cost: CostBreakdown
    h2_kg: float
    shore_kwh: float
    reason: TerminationReason
    unserved_kwh: float
    penalty: float
    overridden_steps: int
    arrival_soc: float = math.nan  # SOC when shore power becomes available; nan if the voyage ended at sea

    @property
    def eval_cost(self) -> float:
        """Voyage cost plus the price of sailing demand left unserved by early termination."""
        return self.cost.total() + self.penalty


def make_profiles(cfg: RunConfig, seed: int | None = None) -> ProfileSet:
    """Synthetic profile set restricted to voyages the plant can sail within its SOC window."""
    ship = cfg.ship.uniform()
    return generate(cfg.profile_seed if seed is None else seed, cfg.n_profiles, cfg.profiles,
                    feasible=lambda p: max_power_feasible(p, ship))


def eval_profiles(cfg: RunConfig, pset: ProfileSet) -> list[LoadProfile]:
    """Fixed random subset of training voyages used for every periodic evaluation."""
    rng = np.random.default_rng(np.random.SeedSequence([pset.seed, 2]))
    k = min(cfg.eval_voyages, len(pset.train))
    return [pset.train[i] for i in sorted(rng.choice(len(pset.train), k, replace=False))]


def run_voyage(policy: Policy, profile: LoadProfile, ship: ShipConfig, protect: bool = True,
               penalty_per_kwh: float = 1.0, log_path: str | Path | None = None) -> VoyageResult:
    env = ShipEnv(ship, protect=protect, record=log_path is not None)
    state = env.reset(profile)
    dt_h = ship.step_seconds / 3600.0
    h2 = shore = unmet = 0.0
    arrival = math.nan
    n_over = 0
    while True:
        if state.spa == 1 and math.isnan(arrival):
            arrival = state.soc
        out = env.step(policy(state.observation(ship)))
        for f in out.flows:
            h2 += f.h2_kg
            shore += f.shore * dt_h
            unmet += f.unmet * dt_h
        n_over += any(out.overridden)
        state = out.next_state
        if out.terminated:
            break
    unserved = 0.0
    if out.truncated_reason is not TerminationReason.END_OF_EPISODE:
        unserved = unmet + float(np.sum(profile.sailing_demand[env.t:])) * dt_h
    if log_path is not None:
        env.write_log(log_path)
    return VoyageResult(profile.id, profile.class_label, env.episode_cost, h2, shore, out.truncated_reason,
                        unserved, unserved * penalty_per_kwh, n_over, arrival)


def zero_policy(m: int) -> Policy:
    zero = np.zeros(m)
    return lambda obs: zero


def agent_policy(agent: Td3Agent) -> Policy:
    return lambda obs: agent.select_action(obs, explore=False)


def evaluate(policy: Policy, profiles: Sequence[LoadProfile], ship: ShipConfig, penalty_per_kwh: float = 1.0,
             protect: bool = True) -> list[VoyageResult]:
    return [run_voyage(policy, p, ship, protect, penalty_per_kwh) for p in profiles]


def mean_cost(results: Sequence[VoyageResult]) -> float:
    return float(np.mean([r.eval_cost for r in results]))


# ---------------------------------------------------------------- convergence


def trend(episodes: Sequence[float], costs: Sequence[float]) -> tuple[float, float]:
    """OLS slope of cost against episode and its standard error."""
    x = np.asarray(episodes, dtype=np.float64)
    y = np.asarray(costs, dtype=np.float64)
    n = len(x)
    if n < 3:
        return 0.0, math.inf
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    se = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    return slope, se


def is_converged(episodes: Sequence[int], costs: Sequence[float], baseline: float, window: int,
                 trend_episodes: int) -> bool:
    """Final-window mean below twice the zero-action baseline and no significant upward trend."""
    if not costs:
        return False
    final = float(np.mean(costs[-window:]))
    if not final < 2.0 * baseline:
        return False
    last = episodes[-1]
    sel = [i for i, e in enumerate(episodes) if e > last - trend_episodes]
    slope, se = trend([episodes[i] for i in sel], [costs[i] for i in sel])
    return slope <= 2.0 * se


def moving_average(values: Sequence[float], window: int) -> list[float]:
    """Trailing mean over up to ``window`` points."""
    out = []
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out.append(float(np.mean(values[lo:i + 1])))
    return out


# ---------------------------------------------------------------- training


@dataclass
class SeedResult:
    seed: int
    episodes: list[int]
    costs: list[float]
    best_cost: float
    best_episode: int
    checkpoint: str
    converged: bool = False


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def train_seed(cfg: RunConfig, seed: int, pset: ProfileSet, out_dir: str | Path) -> SeedResult:
    """One independent training run; everything it draws derives from ``seed``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ship = cfg.ship
    agent = Td3Agent(ship.n_clusters, ship.action_limit, dataclasses.replace(cfg.td3, seed=seed))
    pick = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    env = ShipEnv(ship, protect=False)
    evals = eval_profiles(cfg, pset)
    policy = agent_policy(agent)
    curve, diag_rows = [], []
    best, best_ep = math.inf, 0
    meta = {"seed": seed, "config_digest": cfg.digest()}
    for ep in range(1, cfg.max_episodes + 1):
        prof = pset.train[int(pick.integers(len(pset.train)))]
        obs = env.reset(prof).observation(ship)
        sums = np.zeros(4)
        counts = np.zeros(2)
        while True:
            a = agent.act(obs)
            o = env.step(a)
            obs2 = o.next_state.observation(ship)
            d = agent.observe(obs, a, o.reward, obs2, o.terminated)
            if d is not None:
                sums[[0, 1, 3]] += (d.critic1_loss, d.critic2_loss, d.mean_abs_td)
                counts[0] += 1
                if d.actor_updated:
                    sums[2] += d.actor_objective
                    counts[1] += 1
            obs = obs2
            if o.terminated:
                break
        c = max(counts[0], 1)
        diag_rows.append([ep, agent.env_steps, sums[0] / c, sums[1] / c,
                          sums[2] / counts[1] if counts[1] else float("nan"), sums[3] / c])
        if ep % cfg.eval_every_episodes == 0:
            res = evaluate(policy, evals, ship, cfg.unserved_penalty_per_kwh)
            cost = mean_cost(res)
            curve.append([ep, agent.env_steps, cost, float(np.mean([r.cost.gwp_kg for r in res])),
                          sum(r.reason is TerminationReason.SOC_FLOOR for r in res),
                          sum(r.overridden_steps for r in res)])
            if cost < best:
                best, best_ep = cost, ep
                agent.save(out / "best", {**meta, "episode": ep, "eval_cost": cost})
            log.info("seed %d episode %d eval cost %.2f", seed, ep, cost)
    agent.save(out / "final", {**meta, "episode": cfg.max_episodes})
    _write_csv(out / "curve.csv", CURVE_FIELDS, curve)
    _write_csv(out / "diagnostics.csv", DIAG_FIELDS, diag_rows)
    if not curve:
        best_ep = cfg.max_episodes
        agent.save(out / "best", {**meta, "episode": best_ep})
    return SeedResult(seed, [r[0] for r in curve], [r[2] for r in curve], best, best_ep, str(out / "best"))


def _train_job(args):
    cfg, seed, pset, out = args
    return train_seed(cfg, seed, pset, out)


def train_command(cfg: RunConfig, out_dir: str | Path, base_seed: int = 0,
                  pset: ProfileSet | None = None) -> dict:
    """Train ``n_seeds`` runs (seeds ``base_seed + i``), classify convergence and pick the best agent.

    Writes ``config.json``, per-seed directories, ``curves.csv``, ``aggregate.csv``,
    ``summary.json``, ``timing.json`` and ``learning_curve.png``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    t0 = time.perf_counter()
    save_config(cfg, out / "config.json")
    pset = pset or make_profiles(cfg)
    seeds = [base_seed + i for i in range(cfg.n_seeds)]
    jobs = [(cfg, s, pset, out / f"seed_{s}") for s in seeds]
    if cfg.n_workers > 1:
        with ProcessPoolExecutor(cfg.n_workers) as ex:
            results = list(ex.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]

    evals = eval_profiles(cfg, pset)
    baseline = mean_cost(evaluate(zero_policy(cfg.n_clusters), evals, cfg.ship, cfg.unserved_penalty_per_kwh))
    for r in results:
        r.converged = is_converged(r.episodes, r.costs, baseline, cfg.convergence_window, cfg.trend_window_episodes)
    summary = summarize(cfg, results, baseline)
    best = summary["best_seed"]
    agent = Td3Agent.load(out / f"seed_{best}" / "best")
    val = evaluate(agent_policy(agent), pset.validation, cfg.ship, cfg.unserved_penalty_per_kwh)
    summary["validation_mean_cost"] = mean_cost(val)
    summary["validation_soc_floor_episodes"] = sum(r.reason is TerminationReason.SOC_FLOOR for r in val)
    summary["best_checkpoint"] = f"seed_{best}/best"

    _write_csv(out / "curves.csv", ["seed", "episode", "eval_cost"],
               [[r.seed, e, c] for r in results for e, c in zip(r.episodes, r.costs)])
    agg = summary["aggregate"]
    _write_csv(out / "aggregate.csv", ["episode", "mean", "std", "moving_average", "n_converged"],
               [[e, m, s, ma, agg["n"]] for e, m, s, ma in zip(agg["episodes"], agg["mean"], agg["std"],
                                                                agg["moving_average"])])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": time.perf_counter() - t0}) + "\n")
    try:
        from .reports import plot_learning_curves

        plot_learning_curves(results, summary, out / "learning_curve.png")
    except Exception as exc:  # plotting is best-effort; the CSVs carry the data
        log.warning("learning-curve plot failed: %s", exc)
    return summary


def summarize(cfg: RunConfig, results: Sequence[SeedResult], baseline: float) -> dict:
    """Aggregate curves over converged seeds (all seeds if none converged) and choose the best seed."""
    conv = [r for r in results if r.converged]
    pool = conv or list(results)
    episodes = pool[0].episodes if pool else []
    mat = np.array([r.costs for r in pool]) if episodes else np.zeros((0, 0))
    mean = [float(v) for v in mat.mean(axis=0)] if mat.size else []
    std = [float(v) for v in mat.std(axis=0)] if mat.size else []
    best = min(pool, key=lambda r: (r.best_cost, r.seed))
    return {
        "config_digest": cfg.digest(),
        "zero_action_baseline": baseline,
        "seeds": [
            {"seed": r.seed, "converged": r.converged, "best_cost": r.best_cost, "best_episode": r.best_episode,
             "final_window_mean": float(np.mean(r.costs[-cfg.convergence_window:])) if r.costs else None}
            for r in results
        ],
        "n_converged": len(conv),
        "aggregate": {"episodes": episodes, "mean": mean, "std": std,
                      "moving_average": moving_average(mean, cfg.moving_average_window), "n": len(pool),
                      "over_converged_only": bool(conv)},
        "best_seed": best.seed,
        "best_eval_cost": best.best_cost,
    }

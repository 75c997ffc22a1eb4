"""Cost/GWP breakdown reports, the oracle benchmark table and plots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dp
from .config import RunConfig, ShipConfig
from .harness import VoyageResult, agent_policy, evaluate
from .profiles import LoadProfile
from .td3 import Td3Agent

COMPONENTS = ("PEMFC", "Battery", "Electricity", "H2")


class DimensionMismatchError(ValueError):
    """Checkpoint cluster count differs from the configured plant."""


def component_costs(r: VoyageResult) -> list[float]:
    c = r.cost
    return [c.c_f, c.c_b, c.c_e, c.c_h]


def component_gwp(r: VoyageResult, ship: ShipConfig) -> list[float]:
    return [0.0, 0.0, r.shore_kwh * ship.gwp_factors.kg_per_kwh_elec, r.h2_kg * ship.gwp_factors.kg_per_kg_h2]


def ratio_pct(a: float, b: float) -> float:
    if a == b:
        return 100.0
    if a == 0.0:
        return math.inf
    return 100.0 * b / a


def _sum(values: Sequence[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


@dataclass
class ReportBlock:
    label: str
    class_label: str
    costs: list[list[float]]  # per strategy: four component costs
    gwp: list[list[float]]

    def rows(self) -> list[list]:
        """Component rows then the Sum row; Sum is the running total of the rows above it."""
        out = []
        k = len(self.costs)  # strategies
        for i, name in enumerate(COMPONENTS):
            out.append([name, [c[i] for c in self.costs], [g[i] for g in self.gwp]])
        out.append(["Sum", [_sum(c) for c in self.costs], [_sum(g) for g in self.gwp]])
        for row in out:
            row.append([ratio_pct(row[1][0], row[1][j]) for j in range(1, k)])
            row.append([ratio_pct(row[2][0], row[2][j]) for j in range(1, k)])
        return out


def check_dimensions(agent: Td3Agent, ship: ShipConfig) -> None:
    if agent.m != ship.n_clusters:
        raise DimensionMismatchError(
            f"checkpoint controls {agent.m} clusters but the configured plant has {ship.n_clusters}")


def build_report(results: Sequence[Sequence[VoyageResult]], ship: ShipConfig) -> list[ReportBlock]:
    """One block per voyage plus an ``Average`` block; ``results[j]`` are strategy j's voyages."""
    n = len(results[0])
    blocks = []
    for v in range(n):
        rs = [res[v] for res in results]
        blocks.append(ReportBlock(rs[0].profile_id, rs[0].class_label, [component_costs(r) for r in rs],
                                  [component_gwp(r, ship) for r in rs]))
    avg_c = [[float(np.mean([component_costs(r)[i] for r in res])) for i in range(4)] for res in results]
    avg_g = [[float(np.mean([component_gwp(r, ship)[i] for r in res])) for i in range(4)] for res in results]
    blocks.append(ReportBlock("Average", "all", avg_c, avg_g))
    return blocks


def write_report(blocks: Sequence[ReportBlock], names: Sequence[str], out_dir: Path) -> None:
    header = ["voyage", "class", "component"]
    header += [f"cost_usd_{n}" for n in names] + [f"cost_ratio_pct_{n}" for n in names[1:]]
    header += [f"gwp_kg_{n}" for n in names] + [f"gwp_ratio_pct_{n}" for n in names[1:]]
    lines = []
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for b in blocks:
            lines.append(f"\n{b.label} ({b.class_label})")
            lines.append(f"{'':<12}" + "".join(f"{'$ ' + n:>14}" for n in names)
                         + "".join(f"{'% ' + n:>10}" for n in names[1:])
                         + "".join(f"{'kg ' + n:>14}" for n in names)
                         + "".join(f"{'% ' + n:>10}" for n in names[1:]))
            for name, costs, gwps, cr, gr in b.rows():
                w.writerow([b.label, b.class_label, name, *map(repr, costs), *map(repr, cr), *map(repr, gwps),
                            *map(repr, gr)])
                lines.append(f"{name:<12}" + "".join(f"{c:>14.2f}" for c in costs)
                             + "".join(f"{r:>10.1f}" for r in cr) + "".join(f"{g:>14.2f}" for g in gwps)
                             + "".join(f"{r:>10.1f}" for r in gr))
    (out_dir / "report.txt").write_text("\n".join(lines).lstrip("\n") + "\n")


def evaluate_command(checkpoints: Sequence[str | Path], profiles: Sequence[LoadProfile], cfg: RunConfig,
                     out_dir: str | Path, names: Sequence[str] | None = None) -> list[ReportBlock]:
    """Deterministic protected rollouts of each checkpoint; writes ``report.csv`` and ``report.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(names or [f"s{i + 1}" for i in range(len(checkpoints))])
    all_results = []
    for ck in checkpoints:
        agent = Td3Agent.load(ck)
        check_dimensions(agent, cfg.ship)
        all_results.append(evaluate(agent_policy(agent), profiles, cfg.ship, cfg.unserved_penalty_per_kwh))
    blocks = build_report(all_results, cfg.ship)
    write_report(blocks, names, out)
    return blocks


def baseline_report(profiles: Sequence[LoadProfile], cfg: RunConfig, out_dir: str | Path) -> list[ReportBlock]:
    """Report for the all-zero-action policy (no checkpoint needed)."""
    from .harness import zero_policy

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = evaluate(zero_policy(cfg.ship.n_clusters), profiles, cfg.ship, cfg.unserved_penalty_per_kwh)
    blocks = build_report([res], cfg.ship)
    write_report(blocks, ["zero_action"], out)
    return blocks


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchmarkRow:
    profile_id: str
    class_label: str
    dp_cost: float
    agent_cost: float | None

    @property
    def ratio(self) -> float | None:
        return None if self.agent_cost is None else 100.0 * self.agent_cost / self.dp_cost


def benchmark_command(checkpoint: str | Path | None, profiles: Sequence[LoadProfile], cfg: RunConfig,
                      out_dir: str | Path) -> dict:
    """Oracle cost per voyage, the agent's protected rollout cost, and the ratio to the oracle.

    Writes ``benchmark.csv`` (per voyage), ``benchmark_summary.csv`` (strategy,
    average cost, ratio to the oracle) and ``benchmark.png``.  With no
    checkpoint only the oracle row is produced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = dp.DpGrid.from_config(cfg.dp)
    agent = None
    if checkpoint is not None:
        agent = Td3Agent.load(checkpoint)
        check_dimensions(agent, cfg.ship)
    rows = []
    for p in profiles:
        sol = dp.solve(p, cfg.ship, grid, cfg.dp.shortfall_penalty)
        a_cost = None
        if agent is not None:
            a_cost = evaluate(agent_policy(agent), [p], cfg.ship, cfg.unserved_penalty_per_kwh)[0].eval_cost
        rows.append(BenchmarkRow(p.id, p.class_label, sol.trajectory_cost.total(), a_cost))
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["profile", "class", "dp_cost", "agent_cost", "ratio_to_dp_pct"])
        for r in rows:
            w.writerow([r.profile_id, r.class_label, repr(r.dp_cost),
                        "" if r.agent_cost is None else repr(r.agent_cost), "" if r.ratio is None else repr(r.ratio)])
    dp_mean = float(np.mean([r.dp_cost for r in rows]))
    summary = {"dp_mean_cost": dp_mean, "rows": [["DDP", dp_mean, 100.0]]}
    if agent is not None:
        ag_mean = float(np.mean([r.agent_cost for r in rows]))
        label = "TD3 uniform" if agent.m == 1 else f"TD3 {agent.m}-cluster"
        summary["agent_mean_cost"] = ag_mean
        summary["ratio_to_dp_pct"] = 100.0 * ag_mean / dp_mean
        summary["rows"].append([label, ag_mean, summary["ratio_to_dp_pct"]])
    with open(out / "benchmark_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "average_voyage_cost_usd", "ratio_to_dp_pct"])
        for name, cost, ratio in summary["rows"]:
            w.writerow([name, f"{cost:.1f}", f"{ratio:.1f}"])
    summary["per_voyage"] = rows
    try:
        plot_benchmark(rows, out / "benchmark.png")
    except Exception:  # pragma: no cover - plotting backend problems must not hide results
        pass
    return summary


# ---------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_benchmark(rows: Sequence[BenchmarkRow], path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3.5))
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r.dp_cost for r in rows], 0.4, label="DP")
    if rows and rows[0].agent_cost is not None:
        ax.bar(x + 0.2, [r.agent_cost for r in rows], 0.4, label="agent")
    ax.set_xlabel("voyage")
    ax.set_ylabel("voyage cost [$]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_learning_curves(results, summary: dict, path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for r in results:
        ax.plot(r.episodes, r.costs, lw=0.6, alpha=0.5, ls="-" if r.converged else ":")
    agg = summary["aggregate"]
    if agg["episodes"]:
        e = np.asarray(agg["episodes"])
        ma = np.asarray(agg["moving_average"])
        sd = np.asarray(agg["std"])
        ax.plot(e, ma, color="k", lw=1.5, label="moving average")
        ax.fill_between(e, ma - sd, ma + sd, color="k", alpha=0.15, label="mean ± std")
    ax.axhline(summary["zero_action_baseline"], color="r", ls="--", lw=0.8, label="zero action")
    ax.set_xlabel("episode")
    ax.set_ylabel("evaluation voyage cost [$]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)

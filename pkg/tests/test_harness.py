import csv
import json
import math

import numpy as np
import pytest

from shipems import harness
from shipems.env import TerminationReason
from shipems.td3 import Td3Agent

from conftest import tiny_run_config


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = tiny_run_config()
    out = tmp_path_factory.mktemp("run")
    return cfg, out, harness.train_command(cfg, out)


def test_smoke_outputs(tiny_run):
    cfg, out, summary = tiny_run
    for name in ("config.json", "curves.csv", "aggregate.csv", "summary.json", "timing.json"):
        assert (out / name).exists(), name
    for s in range(2):
        d = out / f"seed_{s}"
        assert (d / "curve.csv").exists() and (d / "diagnostics.csv").exists()
        assert (d / "best" / "meta.json").exists() and (d / "final" / "meta.json").exists()
    rows = list(csv.reader(open(out / "curves.csv")))
    assert rows[0] == ["seed", "episode", "eval_cost"]
    assert len(rows) == 1 + 2 * 2  # two seeds, two evaluations each
    assert len(summary["seeds"]) == 2
    assert math.isfinite(summary["validation_mean_cost"])


def test_summary_has_no_wall_clock(tiny_run):
    _, out, _ = tiny_run
    text = (out / "summary.json").read_text()
    assert "wall" not in text and "runtime" not in text
    assert "wall_clock_s" in json.loads((out / "timing.json").read_text())


def test_best_seed_selection(tiny_run):
    _, _, summary = tiny_run
    pool = [s for s in summary["seeds"] if s["converged"]] or summary["seeds"]
    best = min(pool, key=lambda s: (s["best_cost"], s["seed"]))
    assert summary["best_seed"] == best["seed"]


def test_aggregate_is_mean_of_pool(tiny_run):
    cfg, out, summary = tiny_run
    curves = {}
    for seed, ep, cost in list(csv.reader(open(out / "curves.csv")))[1:]:
        curves.setdefault(int(seed), []).append(float(cost))
    pool = [s["seed"] for s in summary["seeds"] if s["converged"]] or list(curves)
    expect = np.mean([curves[s] for s in pool], axis=0)
    assert summary["aggregate"]["mean"] == list(expect)


def test_rerun_identical(tiny_run, tmp_path):
    cfg, out, summary = tiny_run
    again = harness.train_command(cfg, tmp_path)
    assert again == summary
    for name in ("curves.csv", "seed_0/curve.csv", "seed_1/best/actor.bin"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_parallel_matches_serial(tiny_run, tmp_path):
    import dataclasses

    cfg, out, summary = tiny_run
    par = harness.train_command(dataclasses.replace(cfg, n_workers=2), tmp_path)
    assert par["seeds"] == summary["seeds"]
    assert (tmp_path / "curves.csv").read_bytes() == (out / "curves.csv").read_bytes()


def test_checkpoint_meta(tiny_run):
    cfg, out, _ = tiny_run
    meta = json.loads((out / "seed_0" / "best" / "meta.json").read_text())
    assert meta["config_digest"] == cfg.digest() and meta["episode"] >= 2
    Td3Agent.load(out / "seed_0" / "best")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        harness.train_command(tiny_run_config(), blocker / "sub")


# ---------------------------------------------------------------- convergence


def test_divergence_flag():
    eps = list(range(50, 1050, 50))
    assert not harness.is_converged(eps, [2500.0] * 20, baseline=1000.0, window=10, trend_episodes=1000)
    assert harness.is_converged(eps, [900.0] * 20, baseline=1000.0, window=10, trend_episodes=1000)


def test_rising_trend_not_converged():
    eps = list(range(50, 1050, 50))
    costs = [700.0 + 5.0 * i for i in range(20)]
    assert not harness.is_converged(eps, costs, baseline=1000.0, window=10, trend_episodes=1000)


def test_noisy_flat_converged():
    rng = np.random.default_rng(0)
    eps = list(range(50, 1050, 50))
    costs = list(800.0 + rng.normal(0, 20, 20))
    assert harness.is_converged(eps, costs, baseline=1000.0, window=10, trend_episodes=1000)


def test_trend_exact_line():
    slope, se = harness.trend([0, 1, 2, 3], [1.0, 3.0, 5.0, 7.0])
    assert slope == 2.0 and se == 0.0


def test_moving_average():
    assert harness.moving_average([1.0, 2.0, 3.0, 4.0], 2) == [1.0, 1.5, 2.5, 3.5]


# ---------------------------------------------------------------- evaluation


def test_eval_profiles_fixed(tiny_cfg):
    pset = harness.make_profiles(tiny_cfg)
    a = harness.eval_profiles(tiny_cfg, pset)
    b = harness.eval_profiles(tiny_cfg, pset)
    assert [p.id for p in a] == [p.id for p in b]
    assert {p.id for p in a} <= {p.id for p in pset.train}


def test_evaluation_side_effect_free(tiny_cfg):
    pset = harness.make_profiles(tiny_cfg)
    agent = Td3Agent(1, tiny_cfg.ship.action_limit, tiny_cfg.td3)
    before = {k: n.flat.copy() for k, n in agent.nets().items()}
    state = agent.noise_rng.bit_generator.state
    harness.evaluate(harness.agent_policy(agent), pset.validation, tiny_cfg.ship)
    assert all(np.array_equal(before[k], n.flat) for k, n in agent.nets().items())
    assert agent.noise_rng.bit_generator.state == state
    assert agent.env_steps == 0 and len(agent.replay) == 0


def test_zero_policy_completes(tiny_cfg):
    pset = harness.make_profiles(tiny_cfg)
    res = harness.evaluate(harness.zero_policy(1), pset.validation, tiny_cfg.ship)
    assert all(r.reason is TerminationReason.END_OF_EPISODE for r in res)
    assert all(r.penalty == 0.0 and r.eval_cost == r.cost.total() for r in res)


def test_unserved_demand_priced(tiny_cfg):
    # a policy that drives the cells to zero drains the battery; protection keeps the voyage alive
    pset = harness.make_profiles(tiny_cfg)
    lim = tiny_cfg.ship.action_limit
    res = harness.evaluate(lambda obs: np.array([-lim]), pset.validation, tiny_cfg.ship, protect=False)
    for r in res:
        if r.reason is TerminationReason.END_OF_EPISODE:
            assert r.unserved_kwh == 0.0
        else:
            assert r.unserved_kwh > 0.0 and r.penalty == r.unserved_kwh

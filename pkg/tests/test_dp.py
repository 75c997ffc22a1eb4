import json
import math

import numpy as np
import pytest

from shipems import dp
from shipems import kernels as K
from shipems.config import BatteryLimits, ProfileConfig, ShipConfig
from shipems.env import ShipEnv, simulate_step
from shipems.profiles import LoadProfile, generate


def tiny_instance(rng):
    """Exactly representable instance: every reachable (x, soc) lies on the grid."""
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 3))
    sail = [float(rng.choice([0, 16, 32, 48])) for _ in range(n)]
    port = [float(rng.choice([0, 8, 16])) for _ in range(k)]
    prof = LoadProfile("tiny", tuple((d, 0) for d in sail) + tuple((d, 1) for d in port), 3600.0, "low")
    cfg = ShipConfig(
        rated_fc_power_kw=32.0, n_clusters=1, battery_capacity_kwh=64.0,
        soc_bounds=(float(rng.choice([0.5, 0.75])), 1.0), soc_terminate_floor=0.5,
        converter_efficiencies=(1.0,), action_limit=0.5, step_seconds=3600.0,
        initial_x=float(rng.choice([0.0, 0.5, 1.0])), battery=BatteryLimits(1.0, 1.0, 64.0, 64.0),
    )
    grid = dp.DpGrid(soc_levels=3, x_levels=3, action_levels=int(rng.choice([1, 3])))
    return prof, cfg, grid


def solve_or_inf(prof, cfg, grid):
    try:
        return dp.solve(prof, cfg, grid).optimal_cost
    except dp.NoFeasiblePolicyError:
        return math.inf


@pytest.mark.parametrize("seed", range(5))
def test_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        prof, cfg, grid = tiny_instance(rng)
        assert solve_or_inf(prof, cfg, grid) == dp.enumerate_optimal(prof, cfg, grid)


DESK_MIX = ProfileConfig(class_mix=(0.5, 0.5, 0.0))
GRID = dp.DpGrid(soc_levels=101)


@pytest.fixture(scope="module")
def voyage():
    return next(p for p in generate(4, 10, DESK_MIX).train if p.class_label == "moderate")


@pytest.fixture(scope="module")
def ship():
    return ShipConfig(n_clusters=1)


@pytest.fixture(scope="module")
def sol(voyage, ship):
    return dp.solve(voyage, ship, GRID)


def test_forward_replay_matches_value(sol):
    # the exact forward pass and the interpolated value agree to well under 1%
    assert sol.trajectory_cost.total() == pytest.approx(sol.optimal_cost, rel=1e-2)
    assert sol.penalty == 0.0


def test_trajectory_respects_ramp_and_grid(sol, ship):
    xs = [row["x"] for row in sol.trajectory]
    assert xs[0] == ship.initial_x
    assert np.all(np.abs(np.diff(xs)) <= ship.action_limit + 1e-12)
    assert all(abs(x * 100 - round(x * 100)) < 1e-9 for x in xs)


def test_bellman_consistency(sol, voyage, ship):
    ph = K.pack(ship)
    xg, sg = sol.x_grid, sol.soc_grid
    h = sg[1] - sg[0]
    offs = GRID.offsets(ship)
    rng = np.random.default_rng(0)
    for _ in range(25):
        t = int(rng.integers(0, voyage.sailing_steps))
        ix = int(rng.integers(0, len(xg)))
        isoc = int(rng.integers(len(sg) // 2, len(sg)))
        best = math.inf
        for off in offs:
            j = ix + int(off)
            if not 0 <= j < len(xg):
                continue
            flow, cost = simulate_step([xg[ix]], [xg[j]], sg[isoc], voyage.sailing_demand[t], 0, ship)
            if flow.infeasible:
                continue
            v = K.interp_soc(sol.values[t + 1, j], flow.soc_next, sg[0], h, len(sg))
            best = min(best, cost.total() + float(v))
        assert sol.values[t, ix, isoc] == pytest.approx(best, rel=1e-12, abs=0) if math.isfinite(best) else \
            math.isinf(sol.values[t, ix, isoc])


def test_not_worse_than_simple_policies(sol, voyage, ship):
    for action in (0.0, ship.action_limit, -ship.action_limit):
        env = ShipEnv(ship)
        env.reset(voyage)
        while not env.done:
            env.step([action if env.state.spa == 0 else 0.0])
        if env.state.soc >= ship.soc_min:
            assert sol.trajectory_cost.total() <= env.episode_cost.total() * 1.01


def test_soc_refinement_stable(voyage, ship):
    a = dp.solve(voyage, ship, GRID).trajectory_cost.total()
    b = dp.solve(voyage, ship, dp.DpGrid(soc_levels=201)).trajectory_cost.total()
    assert abs(a - b) / b < 0.01


def test_more_actions_never_hurt(voyage, ship):
    coarse = dp.solve(voyage, ship, dp.DpGrid(soc_levels=101, action_levels=3)).optimal_cost
    fine = dp.solve(voyage, ship, dp.DpGrid(soc_levels=101, action_levels=5)).optimal_cost
    assert fine <= coarse + 1e-9


def test_write_outputs(sol, tmp_path):
    sol.write(tmp_path, "v")
    summary = json.loads((tmp_path / "v_summary.json").read_text())
    assert summary["optimal_cost"] == sol.optimal_cost
    lines = (tmp_path / "v_trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("t,p_dem,x_1,soc")
    assert len(lines) == 1 + len(sol.log_rows)


def test_action_lookup(sol):
    a = sol.action_at(0, sol.trajectory[0]["x"], sol.trajectory[0]["soc"])
    assert a in sol.actions


# ---------------------------------------------------------------- errors


def test_grid_validation():
    with pytest.raises(ValueError):
        dp.DpGrid(action_levels=4)
    with pytest.raises(ValueError):
        dp.DpGrid(action_levels=0)
    with pytest.raises(ValueError):
        dp.DpGrid(m_effective=4)


def test_offsets_must_be_whole_steps():
    # nine levels over +-0.04 move in 0.01 steps, finer than a 26-point setpoint grid
    with pytest.raises(ValueError, match="whole number"):
        dp.DpGrid(x_levels=26).offsets(ShipConfig())
    assert list(dp.DpGrid(x_levels=26, action_levels=3).offsets(ShipConfig())) == [-1, 0, 1]


def test_initial_x_off_grid():
    prof = generate(4, 10, DESK_MIX).validation[0]
    with pytest.raises(ValueError, match="not on the setpoint grid"):
        dp.solve(prof, ShipConfig(n_clusters=1, initial_x=0.335))


def test_no_feasible_policy():
    rng = np.random.default_rng(0)
    prof, cfg, grid = tiny_instance(rng)
    impossible = LoadProfile("x", ((1000.0, 0), (0.0, 1)), 3600.0, "low")
    with pytest.raises(dp.NoFeasiblePolicyError):
        dp.solve(impossible, cfg, grid)
    assert dp.enumerate_optimal(impossible, cfg, grid) == math.inf


def test_enumeration_limit():
    prof = generate(4, 10, DESK_MIX).validation[0]
    with pytest.raises(ValueError, match="too large"):
        dp.enumerate_optimal(prof, ShipConfig(n_clusters=1))

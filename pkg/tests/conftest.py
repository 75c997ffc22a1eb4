import os

import pytest

from shipems.config import ShipConfig

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def ship1():
    return ShipConfig(n_clusters=1)


@pytest.fixture
def ship4():
    return ShipConfig(n_clusters=4)


@pytest.fixture
def tmp_out(tmp_path):
    d = tmp_path / "out"
    d.mkdir()
    return d


def pytest_configure(config):
    os.environ.setdefault("MPLBACKEND", "Agg")


def tiny_run_config(**overrides):
    """Seconds-scale protocol for smoke tests: short voyages, small nets, a handful of episodes."""
    from shipems.config import NetConfig, ProfileConfig, Td3Config, desk_preset

    base = dict(
        n_seeds=2, max_episodes=4, eval_every_episodes=2, eval_voyages=2, n_profiles=10,
        convergence_window=2, trend_window_episodes=4, moving_average_window=2,
        profiles=ProfileConfig(sailing_steps=20, port_steps=3, departure_steps=4, arrival_steps=4,
                               class_mix=(0.5, 0.5, 0.0)),
        td3=Td3Config(batch_size=8, warmup_steps=20, replay_capacity=1000, net=NetConfig(hidden=(8, 8))),
    )
    base.update(overrides)
    return desk_preset(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_run_config()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shipems.config import NetConfig, Td3Config
from shipems.td3 import ReplayMemory, Td3Agent, huber_loss

TINY = NetConfig(hidden=(16, 16))


def agent(**kw):
    base = dict(warmup_steps=0, batch_size=8, net=TINY)
    base.update(kw)
    return Td3Agent(1, 0.04, Td3Config(**base))


def fill(ag, n, rng, r=None, done=False):
    for _ in range(n):
        s = rng.random(ag.s_dim)
        ag.replay.add(s, rng.uniform(-0.04, 0.04, ag.m), rng.random() if r is None else r, rng.random(ag.s_dim), done)


# ---------------------------------------------------------------- Huber


def test_huber_values():
    loss, g = huber_loss([0.0, 0.5, 1.0, 2.0, -3.0])
    per = [huber_loss([d])[0] for d in (0.0, 0.5, 1.0, 2.0, -3.0)]
    assert per == [0.0, 0.125, 0.5, 1.5, 2.5]
    assert list(g) == [0.0, 0.5, 1.0, 1.0, -1.0]
    assert loss == pytest.approx(np.mean(per))


@settings(max_examples=200)
@given(st.floats(-50, 50))
def test_huber_gradient_matches_difference(d):
    h = 1e-6
    if abs(abs(d) - 1.0) < 1e-5:
        return
    fd = (huber_loss([d + h])[0] - huber_loss([d - h])[0]) / (2 * h)
    assert huber_loss([d])[1][0] == pytest.approx(fd, abs=1e-6)


# ---------------------------------------------------------------- replay


def test_replay_ring_overwrites_oldest():
    mem = ReplayMemory(3, 1, 1, np.random.default_rng(0))
    for i in range(5):
        mem.add([i], [0], float(i), [i], False)
    assert len(mem) == 3
    assert sorted(mem.r.tolist()) == [2.0, 3.0, 4.0]


def test_replay_no_duplicates_in_batch():
    mem = ReplayMemory(100, 1, 1, np.random.default_rng(0))
    for i in range(50):
        mem.add([i], [0], 0.0, [i], False)
    for _ in range(20):
        idx = mem.sample_indices(50)
        assert len(set(idx.tolist())) == 50


def test_replay_uniform():
    mem = ReplayMemory(20, 1, 1, np.random.default_rng(1))
    for i in range(20):
        mem.add([i], [0], 0.0, [i], False)
    counts = np.zeros(20)
    n_draw = 4000
    for _ in range(n_draw):
        counts[mem.sample_indices(5)] += 1
    p = 5 / 20
    sd = np.sqrt(n_draw * p * (1 - p))
    assert np.all(np.abs(counts - n_draw * p) < 3 * sd + 1)


def test_replay_rejects_nonfinite_reward():
    mem = ReplayMemory(3, 1, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mem.add([0], [0], float("nan"), [0], False)


# ---------------------------------------------------------------- acting


def test_zero_sigma_explore_equals_greedy():
    ag = agent(exploration_sigma=0.0)
    s = np.array([0.5, 0.9, 0.0, 0.3])
    assert np.array_equal(ag.select_action(s, True), ag.select_action(s, False))


def test_actions_within_bounds():
    ag = agent(exploration_sigma=5.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = ag.select_action(rng.normal(size=4) * 5, explore=True)
        assert np.all(np.abs(a) <= 0.04)


def test_noise_reproducible():
    s = np.array([0.5, 0.9, 0.0, 0.3])
    a1 = [agent(seed=3).select_action(s, True) for _ in range(1)]
    a2 = [agent(seed=3).select_action(s, True) for _ in range(1)]
    assert np.array_equal(a1, a2)


def test_warmup_actions_uniform_random():
    ag = agent(warmup_steps=10)
    a = [ag.act(np.zeros(4)) for _ in range(5)]
    assert len({float(x[0]) for x in a}) == 5


# ---------------------------------------------------------------- targets


def test_terminal_target_is_reward():
    ag = agent()
    r = np.array([0.3, -1.0])
    y = ag.compute_target(r, np.random.default_rng(0).random((2, 4)), np.array([True, True]))
    assert np.array_equal(y, r)


def test_gamma_zero_target_is_reward():
    ag = agent(gamma=0.0)
    r = np.array([0.3, 0.7])
    assert np.array_equal(ag.compute_target(r, np.zeros((2, 4)), np.array([False, False])), r)


def constant_critic(net, value):
    for layer in net.layers:
        layer.W[...] = 0.0
        layer.b[...] = 0.0
    net.layers[-1].b[...] = value


def test_min_of_critics():
    ag = agent(gamma=1.0)
    constant_critic(ag.critic1_target, 3.0)
    constant_critic(ag.critic2_target, 5.0)
    y = ag.compute_target(np.array([1.0]), np.zeros((1, 4)), np.array([False]))
    assert y[0] == 4.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_clipped_double_q_not_above_single(seed):
    ag = agent(seed=seed, smoothing_sigma=0.0)
    rng = np.random.default_rng(seed)
    s2 = rng.random((16, 4))
    r = rng.random(16)
    done = np.zeros(16, bool)
    y = ag.compute_target(r, s2, done)
    a2 = ag.actor_target.predict(s2)
    single = r + ag.cfg.gamma * ag._q(ag.critic1_target, s2, np.clip(a2, -0.04, 0.04))
    assert np.all(y <= single + 1e-15)


def test_smoothed_target_action_in_bounds():
    ag = agent(smoothing_sigma=100.0, noise_clip=100.0)
    for layer in ag.actor_target.layers:
        layer.W *= 100
    seen = []
    orig = ag._q

    def spy(net, s, a, cache=False):
        seen.append(a.copy())
        return orig(net, s, a, cache)

    ag._q = spy
    ag.compute_target(np.zeros(64), np.random.default_rng(0).random((64, 4)), np.zeros(64, bool))
    assert all(np.all(np.abs(a) <= 0.04) for a in seen)


# ---------------------------------------------------------------- training


def test_train_before_warmup_is_noop():
    ag = agent(warmup_steps=100)
    fill(ag, 20, np.random.default_rng(0))
    before = ag.critic1.flat.copy()
    assert ag.train_step() is None
    assert np.array_equal(ag.critic1.flat, before)


def test_policy_delay_ratio():
    ag = agent(policy_delay=2)
    rng = np.random.default_rng(0)
    fill(ag, 32, rng)
    for _ in range(11):
        ag.train_step()
    assert ag.critic_updates == 11
    assert abs(ag.actor_updates - ag.critic_updates / 2) <= 1


def test_tau_one_targets_equal_online():
    ag = agent(tau=1.0, policy_delay=1)
    fill(ag, 32, np.random.default_rng(0))
    ag.train_step()
    for name in ("actor", "critic1", "critic2"):
        assert np.array_equal(getattr(ag, name).flat, getattr(ag, f"{name}_target").flat)


def test_targets_change_only_on_actor_steps():
    ag = agent(policy_delay=2)
    fill(ag, 32, np.random.default_rng(0))
    before = ag.critic1_target.flat.copy()
    d = ag.train_step()
    assert not d.actor_updated
    assert np.array_equal(ag.critic1_target.flat, before)
    d = ag.train_step()
    assert d.actor_updated
    assert not np.array_equal(ag.critic1_target.flat, before)


def test_bellman_fixed_point_gamma_zero():
    ag = agent(gamma=0.0, batch_size=1)
    s = np.array([0.5, 0.9, 0.0, 0.3])
    a = np.array([0.01])
    ag.replay.add(s, a, 1.0, s, False)
    for _ in range(400):
        ag.train_step()
    assert ag._q(ag.critic1, s[None], a[None])[0] == pytest.approx(1.0, abs=1e-2)
    assert ag._q(ag.critic2, s[None], a[None])[0] == pytest.approx(1.0, abs=1e-2)


def test_actor_finds_interior_bandit_optimum():
    # one-step bandit with reward peaked at a = 0.02: the greedy action must end near the peak, not at a bound
    ag = agent(gamma=0.0, batch_size=32, policy_delay=1)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        s, a = rng.random(4), rng.uniform(-0.04, 0.04, 1)
        ag.replay.add(s, a, float(-1000 * (a[0] - 0.02) ** 2), s, True)
    for _ in range(3000):
        ag.train_step()
    acts = [ag.select_action(rng.random(4))[0] for _ in range(10)]
    assert np.all(np.abs(np.array(acts) - 0.02) < 0.006)


def test_observe_honours_update_interval():
    ag = agent(update_interval=3)
    rng = np.random.default_rng(0)
    fill(ag, 16, rng)
    out = [ag.observe(rng.random(4), [0.0], 0.5, rng.random(4), False) for _ in range(6)]
    assert [o is not None for o in out] == [False, False, True, False, False, True]


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    ag = agent()
    fill(ag, 32, np.random.default_rng(0))
    for _ in range(3):
        ag.train_step()
    ag.save(tmp_path / "a", {"seed": 1})
    back = Td3Agent.load(tmp_path / "a")
    back.save(tmp_path / "b", {"seed": 1})
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    s = np.array([0.5, 0.9, 0.0, 0.3])
    assert np.array_equal(back.select_action(s), ag.select_action(s))
    assert back.actor_updates == ag.actor_updates


def test_load_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        Td3Agent.load(tmp_path / "nope")


def test_config_validation():
    with pytest.raises(ValueError):
        Td3Config(gamma=1.5)
    with pytest.raises(ValueError):
        Td3Config(tau=0.0)
    with pytest.raises(ValueError):
        Td3Config(policy_delay=0)

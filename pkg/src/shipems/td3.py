"""TD3 agent with a Huber critic loss.

Clipped double-Q targets, target-policy smoothing, delayed actor updates and
soft target updates.  Noise magnitudes in :class:`Td3Config` are fractions
of the action limit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .config import Td3Config, to_dict

NET_NAMES = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")
DIAG_FIELDS = ("episode", "env_steps", "critic1_loss", "critic2_loss", "actor_objective", "mean_abs_td")


class ReplayMemory:
    """Fixed-capacity ring buffer of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.s = np.zeros((capacity, s_dim))
        self.a = np.zeros((capacity, a_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, s_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, terminal: bool) -> None:
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"cannot sample {batch} from {self.size} transitions")
        return self.rng.choice(self.size, size=batch, replace=False)

    def sample(self, batch: int):
        idx = self.sample_indices(batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


def huber_loss(deltas) -> tuple[float, np.ndarray]:
    """Mean Huber loss (threshold 1) and the per-sample derivative ``d sigma / d delta``."""
    d = np.asarray(deltas, dtype=np.float64)
    ad = np.abs(d)
    quad = ad < 1.0
    sigma = np.where(quad, 0.5 * d * d, ad - 0.5)
    grad = np.where(quad, d, np.sign(d))
    return float(sigma.mean()) if d.size else 0.0, grad


@dataclass
class Diagnostics:
    critic1_loss: float
    critic2_loss: float
    actor_objective: float  # nan when the actor was not updated this step
    mean_abs_td: float
    actor_updated: bool


class Td3Agent:
    def __init__(self, m: int, action_limit: float, cfg: Td3Config | None = None):
        self.cfg = cfg or Td3Config()
        self.m = m
        self.s_dim = m + 3
        self.action_limit = float(action_limit)
        root = np.random.SeedSequence(self.cfg.seed)
        init_ss, noise_ss, replay_ss = root.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        hidden = self.cfg.net.hidden
        self.actor = nn.actor_net(m, init_rng, self.action_limit, hidden)
        self.critic1 = nn.critic_net(m, init_rng, hidden)
        self.critic2 = nn.critic_net(m, init_rng, hidden)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        n = self.cfg.net
        self.actor_opt = nn.AdamState.for_net(self.actor, n.actor_lr, n.beta1, n.beta2, n.eps)
        self.critic1_opt = nn.AdamState.for_net(self.critic1, n.critic_lr, n.beta1, n.beta2, n.eps)
        self.critic2_opt = nn.AdamState.for_net(self.critic2, n.critic_lr, n.beta1, n.beta2, n.eps)
        self.replay = ReplayMemory(self.cfg.replay_capacity, self.s_dim, m, np.random.default_rng(replay_ss))
        self.env_steps = 0
        self.critic_updates = 0
        self.actor_updates = 0

    # ------------------------------------------------------------ acting

    def select_action(self, obs: np.ndarray, explore: bool = False) -> np.ndarray:
        a = self.actor.predict(np.asarray(obs, dtype=np.float64))
        if explore:
            sigma = self.cfg.exploration_sigma * self.action_limit
            if sigma > 0:
                a = a + self.noise_rng.normal(0.0, sigma, self.m)
        return np.clip(a, -self.action_limit, self.action_limit)

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Training-mode action: uniform random during warmup, then noisy policy."""
        if self.env_steps < self.cfg.warmup_steps:
            return self.noise_rng.uniform(-self.action_limit, self.action_limit, self.m)
        return self.select_action(obs, explore=True)

    def observe(self, s, a, r, s2, terminal: bool) -> Diagnostics | None:
        """Store a transition and train every ``update_interval`` steps once warm."""
        self.replay.add(s, a, r, s2, terminal)
        self.env_steps += 1
        if self.env_steps % self.cfg.update_interval:
            return None
        return self.train_step()

    # ------------------------------------------------------------ learning

    def _q(self, net: nn.DenseNet, s: np.ndarray, a: np.ndarray, cache: bool = False) -> np.ndarray:
        # critics see the action rescaled to [-1, 1] so it is on the same footing as the state
        x = np.concatenate([s, a / self.action_limit], axis=1)
        return (net.forward(x) if cache else net.predict(x))[:, 0]

    def compute_target(self, r, s2, done) -> np.ndarray:
        lim = self.action_limit
        a2 = self.actor_target.predict(s2)
        sigma = self.cfg.smoothing_sigma * lim
        clip = self.cfg.noise_clip * lim
        noise = np.clip(self.noise_rng.normal(0.0, sigma, a2.shape), -clip, clip) if sigma > 0 else 0.0
        a2 = np.clip(a2 + noise, -lim, lim)
        q = np.minimum(self._q(self.critic1_target, s2, a2), self._q(self.critic2_target, s2, a2))
        return np.where(done, r, r + self.cfg.gamma * q)

    def _critic_update(self, net, opt, s, a, y) -> tuple[float, np.ndarray]:
        q = self._q(net, s, a, cache=True)
        delta = q - y
        loss, g = huber_loss(delta)
        grads, _ = net.backward((g / len(y))[:, None])
        nn.adam_step(net, grads, opt)
        return loss, delta

    def train_step(self) -> Diagnostics | None:
        cfg = self.cfg
        if len(self.replay) < max(cfg.batch_size, cfg.warmup_steps):
            return None
        s, a, r, s2, done = self.replay.sample(cfg.batch_size)
        y = self.compute_target(r, s2, done)
        l1, d1 = self._critic_update(self.critic1, self.critic1_opt, s, a, y)
        l2, _ = self._critic_update(self.critic2, self.critic2_opt, s, a, y)
        self.critic_updates += 1
        objective = float("nan")
        updated = False
        if self.critic_updates % cfg.policy_delay == 0:
            pi = self.actor.forward(s)
            q = self._q(self.critic1, s, pi, cache=True)
            objective = float(q.mean())
            # ascend J = mean Q1(s, pi(s)): descend on -J
            _, g_in = self.critic1.backward(np.full((len(q), 1), -1.0 / len(q)))
            grads, _ = self.actor.backward(g_in[:, self.s_dim:] / self.action_limit)
            nn.adam_step(self.actor, grads, self.actor_opt)
            nn.soft_update(self.actor_target, self.actor, cfg.tau)
            nn.soft_update(self.critic1_target, self.critic1, cfg.tau)
            nn.soft_update(self.critic2_target, self.critic2, cfg.tau)
            self.actor_updates += 1
            updated = True
        return Diagnostics(l1, l2, objective, float(np.mean(np.abs(d1))), updated)

    # ------------------------------------------------------------ persistence

    def nets(self) -> dict[str, nn.DenseNet]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def save(self, directory: str | Path, extra: dict | None = None) -> None:
        """Six network files (online nets carry their Adam state) plus ``meta.json``; replay is excluded."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        opts = {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}
        for name, net in self.nets().items():
            nn.save_net(d / f"{name}.bin", net, opts.get(name))
        meta = {
            "format_version": nn.FORMAT_VERSION,
            "m": self.m,
            "action_limit": self.action_limit,
            "td3": to_dict(self.cfg),
            "env_steps": self.env_steps,
            "critic_updates": self.critic_updates,
            "actor_updates": self.actor_updates,
            **(extra or {}),
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> Td3Agent:
        from .config import from_dict

        d = Path(directory)
        try:
            meta = json.loads((d / "meta.json").read_text())
        except OSError as exc:
            raise FileNotFoundError(f"no agent checkpoint in {d}: {exc}") from exc
        agent = cls(meta["m"], meta["action_limit"], from_dict(Td3Config, meta["td3"], "td3"))
        for name in NET_NAMES:
            net, opt = nn.load_net(d / f"{name}.bin")
            if net.topology() != getattr(agent, name).topology():
                raise nn.NetError(f"{name}: checkpoint topology differs from configuration")
            setattr(agent, name, net)
            if opt is not None:
                setattr(agent, f"{name}_opt", opt)
        agent.env_steps = meta["env_steps"]
        agent.critic_updates = meta["critic_updates"]
        agent.actor_updates = meta["actor_updates"]
        agent.meta = meta
        return agent

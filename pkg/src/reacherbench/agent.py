"""DDPG with uniform experience replay and final-goal hindsight relabelling."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .env import EnvConfig, reward
from .errors import NumericError, ProtocolError
from .nn import (
    AdamState,
    NetworkParams,
    adam_step,
    init_params,
    mlp_backward,
    mlp_forward,
    params_from_arrays,
    params_to_arrays,
    soft_update,
)

PROFILES = {"paper": (400, 300), "reduced": (64, 64)}


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    terminal: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.s[i], self.a[i], self.s_next[i], float(self.r[i]), bool(self.terminal[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    """Fixed-capacity ring of transitions; storage grows lazily up to capacity."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.write_index = 0
        self.fill_count = 0
        self._alloc(min(self.capacity, 4096))

    def _alloc(self, size: int) -> None:
        old = getattr(self, "_s", None)
        s = np.zeros((size, self.obs_dim))
        a = np.zeros((size, self.act_dim))
        s2 = np.zeros((size, self.obs_dim))
        r = np.zeros(size)
        term = np.zeros(size, dtype=bool)
        if old is not None:
            k = self.fill_count
            s[:k], a[:k], s2[:k], r[:k], term[:k] = (
                self._s[:k], self._a[:k], self._s2[:k], self._r[:k], self._term[:k]
            )
        self._s, self._a, self._s2, self._r, self._term = s, a, s2, r, term

    def __len__(self) -> int:
        return self.fill_count

    def push(self, t: Transition) -> None:
        i = self.write_index
        if i >= len(self._r):
            self._alloc(min(self.capacity, 2 * len(self._r)))
        self._s[i] = t.s
        self._a[i] = t.a
        self._s2[i] = t.s_next
        self._r[i] = t.r
        self._term[i] = t.terminal
        self.write_index = (i + 1) % self.capacity
        self.fill_count = min(self.fill_count + 1, self.capacity)

    def extend(self, transitions: Sequence[Transition]) -> None:
        for t in transitions:
            self.push(t)

    def _take(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._s2[idx], self._r[idx], self._term[idx])

    def sample_batch(self, n: int, rng: np.random.Generator) -> Batch:
        if self.fill_count == 0:
            raise ProtocolError("cannot sample from an empty replay buffer")
        return self._take(rng.integers(0, self.fill_count, size=n))

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        if self.fill_count < self.capacity:
            idx = np.arange(self.fill_count)
        else:
            idx = (np.arange(self.capacity) + self.write_index) % self.capacity
        return self._take(idx)

    def state_arrays(self) -> dict[str, np.ndarray]:
        k = self.fill_count
        return {
            "buffer.s": self._s[:k], "buffer.a": self._a[:k], "buffer.s_next": self._s2[:k],
            "buffer.r": self._r[:k], "buffer.terminal": self._term[:k],
            "buffer.meta": np.array([self.capacity, self.write_index, self.fill_count]),
        }

    @classmethod
    def from_arrays(cls, data, obs_dim: int, act_dim: int) -> "ReplayBuffer":
        capacity, write_index, fill = (int(v) for v in data["buffer.meta"])
        buf = cls(capacity, obs_dim, act_dim)
        buf._alloc(max(fill, min(capacity, 4096)))
        buf._s[:fill] = data["buffer.s"]
        buf._a[:fill] = data["buffer.a"]
        buf._s2[:fill] = data["buffer.s_next"]
        buf._r[:fill] = data["buffer.r"]
        buf._term[:fill] = data["buffer.terminal"]
        buf.write_index, buf.fill_count = write_index, fill
        return buf


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.98
    buffer_capacity: int = 1_000_000
    batch_size: int = 64
    exploration_rate: float = 0.01
    tau: float = 0.001
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    her_enabled: bool = True
    noise: str = "gaussian"  # or "ou"
    ou_theta: float = 0.15
    obs_scaling: bool = True
    obs_norm: str = "running"  # or "fixed": constant divisors from observation_scale

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.noise not in ("gaussian", "ou"):
            raise ValueError(f"noise must be 'gaussian' or 'ou', got {self.noise!r}")
        if self.obs_norm not in ("fixed", "running"):
            raise ValueError(f"obs_norm must be 'fixed' or 'running', got {self.obs_norm!r}")


class Normalizer:
    """Running mean/std of observations (parallel Welford merge), clipped output."""

    def __init__(self, dim: int, clip: float = 5.0, floor: float = 1e-2):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.clip = clip
        self.floor = floor

    def update(self, x: np.ndarray) -> None:
        x = np.atleast_2d(x)
        n = len(x)
        if n == 0:
            return
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        total = self.count + n
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + m2_b + delta**2 * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.maximum(np.sqrt(self.m2 / self.count), self.floor)

    def __call__(self, x):
        return np.clip((x - self.mean) / self.std, -self.clip, self.clip)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"norm.count": np.array(self.count), "norm.mean": self.mean, "norm.m2": self.m2}

    def load_arrays(self, data) -> None:
        self.count = int(data["norm.count"])
        self.mean = np.array(data["norm.mean"])
        self.m2 = np.array(data["norm.m2"])


def observation_scale(env_config: EnvConfig, reach: float) -> np.ndarray:
    """Fixed per-feature divisors that bring observation entries to order one."""
    n = env_config.n_active
    vel = env_config.omega_max
    acc = env_config.omega_max / env_config.dt
    return np.concatenate([np.full(n, math.pi), np.full(n, vel), np.full(n, acc), np.full(6, reach)])


class Agent:
    def __init__(
        self,
        obs_dim: int,
        act_low,
        act_high,
        config: AgentConfig = AgentConfig(),
        hidden: Sequence[int] = PROFILES["paper"],
        seed=None,
        obs_scale=None,
    ):
        self.config = config
        self.act_low = np.asarray(act_low, dtype=float)
        self.act_high = np.asarray(act_high, dtype=float)
        self.obs_dim = obs_dim
        self.act_dim = len(self.act_low)
        self.hidden = tuple(hidden)
        if len(self.hidden) != 2:
            raise ValueError("networks use exactly two hidden layers")
        self.obs_scale = None if obs_scale is None else np.asarray(obs_scale, dtype=float)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_rng, self.rng = (np.random.default_rng(s) for s in ss.spawn(2))
        h1, h2 = self.hidden
        self.actor = init_params((obs_dim, h1, h2, self.act_dim), "actor", init_rng, self.act_low, self.act_high)
        self.critic = init_params((obs_dim, h1, h2, 1), "critic", init_rng, extra_dim=self.act_dim, inject_at=1)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState.for_params(self.actor)
        self.critic_opt = AdamState.for_params(self.critic)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, self.act_dim)
        self.noise_state = np.zeros(self.act_dim)
        self.train_steps = 0
        self.normalizer = Normalizer(obs_dim) if config.obs_norm == "running" else None

    # -- acting --------------------------------------------------------------

    def _in(self, obs):
        if self.normalizer is not None:
            return self.normalizer(obs)
        return obs if self.obs_scale is None else obs / self.obs_scale

    def policy(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs.shape[-1]} entries, actor expects {self.obs_dim}")
        out, _ = mlp_forward(self.actor, self._in(obs))
        return out

    def reset_noise(self) -> None:
        self.noise_state = np.zeros(self.act_dim)

    def select_action(self, obs, explore: bool) -> np.ndarray:
        a = self.policy(obs)
        if not explore:
            return a
        std = self.config.exploration_rate * (self.act_high - self.act_low)
        if self.config.noise == "gaussian":
            noise = std * self.rng.standard_normal(self.act_dim)
        else:
            th = self.config.ou_theta
            self.noise_state = self.noise_state - th * self.noise_state + std * self.rng.standard_normal(self.act_dim)
            noise = self.noise_state
        return np.clip(a + noise, self.act_low, self.act_high)

    # -- learning ------------------------------------------------------------

    def q_values(self, critic: NetworkParams, s, a) -> np.ndarray:
        out, _ = mlp_forward(critic, self._in(s), a)
        return out[..., 0]

    def critic_target(self, batch: Batch) -> np.ndarray:
        return critic_target(batch, self.target_actor, self.target_critic, self.config.gamma, self._in)

    def train_step(self) -> dict[str, float]:
        return train_step(self)

    def push_episode(self, episode: Sequence[Transition], env_config: EnvConfig) -> None:
        self.buffer.extend(episode)
        extra = []
        if self.config.her_enabled and episode:
            extra = her_relabel(episode, env_config)
            self.buffer.extend(extra)
        if self.normalizer is not None:
            self.normalizer.update(np.array([t.s for t in list(episode) + extra]))

    # -- persistence -----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            out.update(params_to_arrays(getattr(self, name), name))
        for name in ("actor_opt", "critic_opt"):
            opt = getattr(self, name)
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                out[f"{name}.m{i}"] = m
                out[f"{name}.v{i}"] = v
            out[f"{name}.step"] = np.array(opt.step_count)
        out.update(self.buffer.state_arrays())
        if self.normalizer is not None:
            out.update(self.normalizer.state_arrays())
        out["agent.noise_state"] = self.noise_state
        out["agent.rng"] = np.array(json.dumps(self.rng.bit_generator.state))
        out["agent.train_steps"] = np.array(self.train_steps)
        out["agent.meta"] = np.array(json.dumps({
            "config": asdict(self.config),
            "hidden": list(self.hidden),
            "obs_dim": self.obs_dim,
            "act_low": self.act_low.tolist(),
            "act_high": self.act_high.tolist(),
            "obs_scale": None if self.obs_scale is None else self.obs_scale.tolist(),
        }))
        return out

    @classmethod
    def from_arrays(cls, data) -> "Agent":
        meta = json.loads(str(data["agent.meta"]))
        agent = cls(
            meta["obs_dim"], meta["act_low"], meta["act_high"], AgentConfig(**meta["config"]),
            hidden=meta["hidden"], seed=0, obs_scale=meta["obs_scale"],
        )
        for name in ("actor", "critic", "target_actor", "target_critic"):
            setattr(agent, name, params_from_arrays(data, name))
        for name, params in (("actor_opt", agent.actor), ("critic_opt", agent.critic)):
            n = len(params.arrays())
            opt = AdamState(
                [np.array(data[f"{name}.m{i}"]) for i in range(n)],
                [np.array(data[f"{name}.v{i}"]) for i in range(n)],
                int(data[f"{name}.step"]),
            )
            setattr(agent, name, opt)
        agent.buffer = ReplayBuffer.from_arrays(data, agent.obs_dim, agent.act_dim)
        if agent.normalizer is not None:
            agent.normalizer.load_arrays(data)
        agent.noise_state = np.array(data["agent.noise_state"])
        agent.rng.bit_generator.state = json.loads(str(data["agent.rng"]))
        agent.train_steps = int(data["agent.train_steps"])
        return agent


def critic_target(
    batch: Batch, target_actor: NetworkParams, target_critic: NetworkParams, gamma: float, preprocess=None
) -> np.ndarray:
    """Bellman targets ``r + (1 - terminal) * gamma * Q'(s', mu'(s'))``.

    ``preprocess`` maps raw observations to network inputs (scaling or normalisation).
    """
    s2 = batch.s_next if preprocess is None else preprocess(batch.s_next)
    a2, _ = mlp_forward(target_actor, s2)
    q2, _ = mlp_forward(target_critic, s2, a2)
    return batch.r + (1.0 - batch.terminal) * gamma * q2[:, 0]


def train_step(agent: Agent) -> dict[str, float]:
    cfg = agent.config
    batch = agent.buffer.sample_batch(cfg.batch_size, agent.rng)
    n = len(batch)
    y = agent.critic_target(batch)
    s = agent._in(batch.s)

    q, cache = mlp_forward(agent.critic, s, batch.a)
    err = q[:, 0] - y
    critic_loss = float(np.mean(err * err))
    if not math.isfinite(critic_loss):
        raise NumericError(f"critic loss is {critic_loss} after {agent.train_steps} train steps")
    g = mlp_backward(agent.critic, cache, (2.0 / n) * err[:, None])
    adam_step(agent.critic_opt, agent.critic, g.param_grads, cfg.critic_lr)

    # deterministic policy gradient: dJ/dtheta_mu = mean dQ/da * dmu/dtheta_mu
    a, actor_cache = mlp_forward(agent.actor, s)
    q_pi, critic_cache = mlp_forward(agent.critic, s, a)
    actor_objective = float(np.mean(q_pi))
    dq = mlp_backward(agent.critic, critic_cache, np.full((n, 1), 1.0 / n))
    ga = mlp_backward(agent.actor, actor_cache, -dq.extra_grad)
    adam_step(agent.actor_opt, agent.actor, ga.param_grads, cfg.actor_lr)

    soft_update(agent.target_critic, agent.critic, cfg.tau)
    soft_update(agent.target_actor, agent.actor, cfg.tau)
    agent.train_steps += 1
    return {"critic_loss": critic_loss, "actor_objective": actor_objective}


def achieved_position(obs: np.ndarray) -> np.ndarray:
    """End-effector position encoded in an observation (``goal - (goal - ee)``)."""
    return obs[..., -3:] - obs[..., -6:-3]


def _relabel_obs(obs: np.ndarray, new_goal: np.ndarray) -> np.ndarray:
    out = obs.copy()
    out[-6:-3] = new_goal - achieved_position(obs)
    out[-3:] = new_goal
    return out


def her_relabel(episode: Sequence[Transition], env_config: EnvConfig) -> list[Transition]:
    """Copy of ``episode`` with the goal replaced by the final achieved position."""
    if not episode:
        raise ProtocolError("cannot relabel an empty episode")
    dim = env_config.obs_dim
    for t in episode:
        if len(t.s) != dim or len(t.s_next) != dim:
            raise ProtocolError(f"observation length {len(t.s)} does not match layout 3n+6 = {dim}")
    new_goal = achieved_position(episode[-1].s_next)
    out = []
    for t in episode:
        ee = achieved_position(t.s_next)
        r = reward(ee, new_goal, t.a, env_config.epsilon, env_config.reward_mode)
        success = float(np.linalg.norm(ee - new_goal)) <= env_config.epsilon
        out.append(Transition(_relabel_obs(t.s, new_goal), t.a.copy(), _relabel_obs(t.s_next, new_goal), r, success))
    return out

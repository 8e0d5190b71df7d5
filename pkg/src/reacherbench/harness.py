"""Training protocol: periodic deterministic test sessions, persistence, aggregation.

A run writes two files into its output directory:

``run_seed{k}.jsonl``
    a header line, one line per test session, and a footer line once the run
    completes (field names are listed in the README).
``run_seed{k}.ckpt.npz``
    full agent and environment state at the last session boundary; a second
    invocation with the same directory resumes from it.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .agent import Agent, Transition, observation_scale
from .arm import ArmModel
from .config import ExperimentConfig, config_hash, config_to_dict
from .env import EnvConfig, ReacherEnv
from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

RECORD_FORMAT = 1
CI_LEVEL = 0.65


@dataclass(frozen=True)
class TestSessionRecord:
    __test__ = False  # keep pytest from collecting it

    episode_index: int
    successes: int
    mean_return: float
    train_returns: tuple[float, ...] = ()

    def to_json(self) -> dict:
        return {
            "record": "session",
            "episode": self.episode_index,
            "successes": self.successes,
            "mean_return": self.mean_return,
            "train_returns": list(self.train_returns),
        }


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    test_episodes: int
    sessions: list[TestSessionRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict, compare=False)
    wall_clock_s: float = field(default=0.0, compare=False)
    checkpoint: str | None = field(default=None, compare=False)
    completed: bool = field(default=False, compare=False)

    @property
    def successes(self) -> list[int]:
        return [s.successes for s in self.sessions]

    @property
    def best(self) -> int:
        return max(self.successes, default=0)

    def header(self) -> dict:
        return {
            "record": "header",
            "format": RECORD_FORMAT,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "test_episodes": self.test_episodes,
            "config": self.config,
        }

    def footer(self) -> dict:
        return {"record": "footer", "wall_clock_s": self.wall_clock_s, "checkpoint": self.checkpoint}


def write_record(record: RunRecord, path) -> None:
    lines = [record.header()] + [s.to_json() for s in record.sessions]
    if record.completed:
        lines.append(record.footer())
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("".join(json.dumps(line) + "\n" for line in lines))
    os.replace(tmp, path)


def append_session(path, session: TestSessionRecord) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(session.to_json()) + "\n")


def read_record(path) -> RunRecord:
    record = None
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: not valid JSON ({exc})") from exc
            kind = item.get("record")
            if kind == "header":
                if item.get("format") != RECORD_FORMAT:
                    raise ValueError(f"{path}: unsupported record format {item.get('format')}")
                record = RunRecord(item["config_hash"], item["seed"], item["test_episodes"], config=item["config"])
            elif record is None:
                raise ValueError(f"{path}:{n}: record line before header")
            elif kind == "session":
                record.sessions.append(
                    TestSessionRecord(item["episode"], item["successes"], item["mean_return"], tuple(item["train_returns"]))
                )
            elif kind == "footer":
                record.wall_clock_s = item["wall_clock_s"]
                record.checkpoint = item["checkpoint"]
                record.completed = True
            else:
                raise ValueError(f"{path}:{n}: unknown record kind {kind!r}")
    if record is None:
        raise ValueError(f"{path}: no header line")
    return record


# -- policies and test sessions ---------------------------------------------

Policy = Callable[[np.ndarray, ReacherEnv], np.ndarray]


def as_policy(agent) -> Policy:
    if isinstance(agent, Agent):
        return lambda obs, env: agent.select_action(obs, explore=False)
    return agent


def oracle_policy(obs, env: ReacherEnv) -> np.ndarray:
    """Cheats by commanding the joint sample that generated the current goal."""
    return env.goal.generator_theta[: env.config.n_active]


def frozen_policy(obs, env: ReacherEnv) -> np.ndarray:
    """Holds the start pose."""
    return env.start[: env.config.n_active]


def run_episode(policy: Policy, env: ReacherEnv, rng=None, goal=None) -> tuple[bool, float]:
    obs = env.reset(rng, goal=goal)
    total = 0.0
    while True:
        res = env.step(policy(obs, env))
        total += res.reward
        obs = res.observation
        if res.success or res.truncated:
            return res.success, total


def run_test_session(
    agent, env_config: EnvConfig, test_episodes: int, rng, model: ArmModel | None = None, episode_index: int = 0
) -> TestSessionRecord:
    """Run fresh episodes without exploration noise and count successes."""
    from .arm import ur5

    env = ReacherEnv(model or ur5(), env_config)
    policy = as_policy(agent)
    successes, returns = 0, []
    for _ in range(test_episodes):
        ok, ret = run_episode(policy, env, rng)
        successes += ok
        returns.append(ret)
    mean_return = float(np.mean(returns)) if returns else 0.0
    return TestSessionRecord(episode_index, successes, mean_return)


# -- training ----------------------------------------------------------------

def _streams(seed: int):
    agent_ss, env_ss = np.random.SeedSequence([seed, 0]).spawn(2)
    return agent_ss, env_ss


def _test_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, episode])


def make_agent(config: ExperimentConfig, env: ReacherEnv, seed) -> Agent:
    scale = observation_scale(config.env, env.model.reach_bound) if config.agent.obs_scaling else None
    return Agent(env.obs_dim, env.lower, env.upper, config.agent, hidden=config.hidden, seed=seed, obs_scale=scale)


def train_episode(agent: Agent, env: ReacherEnv) -> float:
    """One exploratory episode; trains once per step after buffer warm-up."""
    obs = env.reset()
    agent.reset_noise()
    episode, total = [], 0.0
    warm = agent.config.batch_size
    while True:
        action = agent.select_action(obs, explore=True)
        res = env.step(action)
        episode.append(Transition(obs, action, res.observation, res.reward, res.success))
        total += res.reward
        obs = res.observation
        if len(agent.buffer) >= warm:
            agent.train_step()
        if res.success or res.truncated:
            break
    agent.push_episode(episode, env.config)
    return total


def save_checkpoint(path, agent: Agent, env: ReacherEnv, episodes_done: int, n_sessions: int, cfg_hash: str) -> None:
    arrays = agent.state_arrays()
    arrays["run.env_rng"] = np.array(json.dumps(env.rng.bit_generator.state))
    arrays["run.progress"] = np.array([episodes_done, n_sessions])
    arrays["run.config_hash"] = np.array(cfg_hash)
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_agent(path) -> Agent:
    """Load the agent stored in a checkpoint (policy and training state)."""
    try:
        with np.load(path) as data:
            return Agent.from_arrays(data)
    except (OSError, KeyError, ValueError) as exc:
        raise OSError(f"cannot load checkpoint {path}: {exc}") from exc


class Interrupted(Exception):
    """Raised by :func:`run_training` when ``stop_after_sessions`` is reached."""


def run_training(
    config: ExperimentConfig,
    seed: int,
    out_dir=None,
    resume: bool = True,
    stop_after_sessions: int | None = None,
) -> RunRecord:
    model = config.load_arm()
    cfg_hash = config_hash(config)
    agent_ss, env_ss = _streams(seed)
    env = ReacherEnv(model, config.env, seed=env_ss)
    agent = make_agent(config, env, agent_ss)
    record = RunRecord(cfg_hash, seed, config.test_episodes, config=config_to_dict(config))
    episodes_done = 0
    record_path = ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        record_path = out_dir / f"run_seed{seed}.jsonl"
        ckpt_path = out_dir / f"run_seed{seed}.ckpt.npz"
        record.checkpoint = ckpt_path.name
        if resume and ckpt_path.exists() and record_path.exists():
            episodes_done = _resume(record, record_path, ckpt_path, env, cfg_hash)
            agent = load_agent(ckpt_path)
            log.info("resumed seed %d at episode %d", seed, episodes_done)
        write_record(record, record_path)

    started = time.perf_counter()
    returns: list[float] = []
    test_every = config.test_every
    try:
        while episodes_done < config.episodes:
            returns.append(train_episode(agent, env))
            episodes_done += 1
            if test_every and episodes_done % test_every == 0:
                session = run_test_session(
                    agent, config.env, config.test_episodes, _test_rng(seed, episodes_done), model, episodes_done
                )
                session = TestSessionRecord(session.episode_index, session.successes, session.mean_return, tuple(returns))
                returns = []
                record.sessions.append(session)
                log.info("seed %d episode %d: %d/%d", seed, episodes_done, session.successes, config.test_episodes)
                if record_path is not None:
                    save_checkpoint(ckpt_path, agent, env, episodes_done, len(record.sessions), cfg_hash)
                    append_session(record_path, session)
                if stop_after_sessions is not None and len(record.sessions) >= stop_after_sessions:
                    raise Interrupted(f"stopped after {len(record.sessions)} sessions")
    except NumericError:
        if out_dir is not None:
            diag = out_dir / f"run_seed{seed}.diverged.npz"
            save_checkpoint(diag, agent, env, episodes_done, len(record.sessions), cfg_hash)
            log.error("numeric divergence; diagnostic checkpoint written to %s", diag)
        raise
    record.wall_clock_s += time.perf_counter() - started
    record.completed = True
    if record_path is not None:
        save_checkpoint(ckpt_path, agent, env, episodes_done, len(record.sessions), cfg_hash)
        write_record(record, record_path)
    return record


def _resume(record: RunRecord, record_path: Path, ckpt_path: Path, env: ReacherEnv, cfg_hash: str) -> int:
    with np.load(ckpt_path) as data:
        if str(data["run.config_hash"]) != cfg_hash:
            raise ConfigError(f"{ckpt_path} was written by a different configuration")
        episodes_done, n_sessions = (int(v) for v in data["run.progress"])
        env.rng.bit_generator.state = json.loads(str(data["run.env_rng"]))
    previous = read_record(record_path)
    if previous.config_hash != cfg_hash:
        raise ConfigError(f"{record_path} was written by a different configuration")
    # sessions logged after the checkpoint are recomputed
    record.sessions = previous.sessions[:n_sessions]
    record.wall_clock_s = previous.wall_clock_s
    return episodes_done


# -- aggregation ---------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    episode_index: int
    mean: float
    ci_low: float
    ci_high: float
    n_runs: int

    @property
    def degenerate(self) -> bool:
        return self.n_runs < 2


def t_interval(values: Sequence[float], level: float = CI_LEVEL) -> tuple[float, float, float]:
    """Mean and symmetric Student-t interval on the standard error."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if len(x) < 2:
        return mean, mean, mean
    sem = float(x.std(ddof=1)) / math.sqrt(len(x))
    half = float(stats.t.ppf(0.5 + level / 2, df=len(x) - 1)) * sem
    return mean, mean - half, mean + half


def aggregate_runs(records: Sequence[RunRecord], level: float = CI_LEVEL) -> list[CurvePoint]:
    if not records:
        return []
    first = records[0]
    for rec in records[1:]:
        if rec.config_hash != first.config_hash:
            raise ConfigError(f"run seed {rec.seed} has config {rec.config_hash}, expected {first.config_hash}")
        if len(rec.sessions) != len(first.sessions):
            raise ConfigError(f"run seed {rec.seed} has {len(rec.sessions)} sessions, expected {len(first.sessions)}")
    if len(records) == 1:
        log.warning("aggregating a single run; confidence intervals are degenerate")
    upper = float(first.test_episodes)
    curve = []
    for i, session in enumerate(first.sessions):
        values = [rec.sessions[i].successes for rec in records]
        mean, lo, hi = t_interval(values, level)
        curve.append(CurvePoint(session.episode_index, mean, max(lo, 0.0), min(hi, upper), len(records)))
    return curve

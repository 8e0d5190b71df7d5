"""Experiment configuration documents (TOML).

Layout::

    name = "farbox_3j"
    arm = "ur5"                 # bundled model, or a path to an .arm file

    [env]
    region = "far_box"          # name, or {type = "box", min = [..], max = [..]}
    n_active = 3
    epsilon = 0.1
    dt = 0.02
    omega_max = "pi"
    reward_mode = "dense"

    [agent]                     # DDPG hyperparameters
    gamma = 0.98
    buffer_capacity = 1000000
    batch_size = 64
    exploration_rate = 0.01
    tau = 0.001
    actor_lr = 0.0001
    critic_lr = 0.001
    her_enabled = true

    [training]
    episodes = 20000
    steps_per_episode = 100
    test_every = 100
    test_episodes = 100
    seeds = [0, 1, 2, 3, 4]
    network_profile = "paper"   # or "reduced"

Paths inside a document are resolved relative to the document's directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import PROFILES, AgentConfig
from .arm import ArmConfigError, ArmModel, _angle, load_arm_file, ur5
from .env import EnvConfig, region_from_dict, region_to_dict
from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    arm: str = "ur5"
    episodes: int = 20_000
    test_every: int = 100
    test_episodes: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    network_profile: str = "paper"
    name: str = "experiment"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.episodes < 0:
            raise ConfigError("episodes must be non-negative")
        if self.test_every < 0 or self.test_episodes < 0:
            raise ConfigError("test_every and test_episodes must be non-negative")
        if self.test_every > self.episodes and self.episodes > 0:
            raise ConfigError(f"test_every={self.test_every} exceeds episodes={self.episodes}; set test_every = 0 to disable testing")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.network_profile not in PROFILES:
            raise ConfigError(f"network_profile must be one of {sorted(PROFILES)}")

    @property
    def steps_per_episode(self) -> int:
        return self.env.max_steps

    @property
    def hidden(self) -> tuple[int, int]:
        return PROFILES[self.network_profile]

    @property
    def n_sessions(self) -> int:
        return self.episodes // self.test_every if self.test_every else 0

    def load_arm(self) -> ArmModel:
        if self.arm == "ur5":
            return ur5()
        try:
            return load_arm_file(self.arm)
        except OSError as exc:
            raise ConfigError(f"arm: cannot read {self.arm!r}: {exc}") from exc


_ENV_KEYS = {f.name for f in dataclasses.fields(EnvConfig)}
_AGENT_KEYS = {f.name for f in dataclasses.fields(AgentConfig)}
_TRAINING_KEYS = {"episodes", "steps_per_episode", "test_every", "test_episodes", "seeds", "network_profile"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{where}]: unknown field(s) {sorted(unknown)}")


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _check_keys(doc, {"name", "arm", "env", "agent", "training"}, "top level")
    env_doc = dict(doc.get("env", {}))
    agent_doc = dict(doc.get("agent", {}))
    train_doc = dict(doc.get("training", {}))
    _check_keys(env_doc, _ENV_KEYS, "env")
    _check_keys(agent_doc, _AGENT_KEYS, "agent")
    _check_keys(train_doc, _TRAINING_KEYS, "training")
    try:
        if "region" in env_doc:
            env_doc["region"] = region_from_dict(env_doc["region"])
        for key in ("omega_max",):
            if key in env_doc:
                env_doc[key] = _angle(env_doc[key], f"env.{key}")
        if "start_theta" in env_doc and env_doc["start_theta"] is not None:
            env_doc["start_theta"] = tuple(
                _angle(v, f"env.start_theta[{i}]") for i, v in enumerate(env_doc["start_theta"])
            )
        if env_doc.get("floor") is False:
            env_doc["floor"] = None
        if "steps_per_episode" in train_doc:
            env_doc["max_steps"] = int(train_doc.pop("steps_per_episode"))
        env = EnvConfig(**env_doc)
        agent = AgentConfig(**agent_doc)
    except ArmConfigError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    arm = str(doc.get("arm", "ur5"))
    if arm != "ur5" and base_dir is not None and not Path(arm).is_absolute():
        arm = str((base_dir / arm).resolve())
    return ExperimentConfig(env=env, agent=agent, arm=arm, name=str(doc.get("name", "experiment")), **train_doc)


def load_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return config_from_dict(doc, base_dir)


def load_config_file(path) -> ExperimentConfig:
    path = Path(path)
    return load_config(path.read_text(), path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    env = dataclasses.asdict(cfg.env)
    env["region"] = region_to_dict(cfg.env.region)
    env["start_theta"] = None if cfg.env.start_theta is None else list(cfg.env.start_theta)
    return {
        "name": cfg.name,
        "arm": cfg.arm,
        "env": env,
        "agent": dataclasses.asdict(cfg.agent),
        "training": {
            "episodes": cfg.episodes,
            "test_every": cfg.test_every,
            "test_episodes": cfg.test_episodes,
            "seeds": list(cfg.seeds),
            "network_profile": cfg.network_profile,
        },
    }


def config_from_json_dict(doc: dict) -> ExperimentConfig:
    """Inverse of :func:`config_to_dict` (as stored in run record headers)."""
    doc = json.loads(json.dumps(doc))
    env = doc["env"]
    max_steps = env.pop("max_steps")
    doc["training"]["steps_per_episode"] = max_steps
    return config_from_dict(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of every field that affects results (seeds and name excluded)."""
    doc = config_to_dict(cfg)
    doc.pop("name")
    doc["training"].pop("seeds")
    if cfg.arm != "ur5":
        # hash the arm geometry, not where the file happens to live
        from .arm import arm_to_dict

        doc["arm"] = arm_to_dict(cfg.load_arm())
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]

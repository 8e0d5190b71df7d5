"""Goal-conditioned Reacher tasks on a kinematic arm.

Observations are laid out as ``[theta, theta_dot, theta_ddot, goal - ee, goal]``
over the active joints, so ``len(obs) == 3 * n_active + 6``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .arm import ArmModel, forward_kinematics, restrict_active
from .errors import ConfigError, InfeasibleRegionError, ProtocolError

SUCCESS_BONUS = 100.0
UNCONSTRAINED_START = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
CONSTRAINED_START = (0.0, math.pi / 2, math.pi / 4, 0.0, 0.0, 0.0)


# -- goal regions ------------------------------------------------------------

@dataclass(frozen=True)
class Unconstrained:
    def contains(self, p) -> bool:
        return True

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points), dtype=bool)


@dataclass(frozen=True)
class ZHeight:
    z_max: float

    def __post_init__(self):
        if not self.z_max > 0:
            raise ConfigError(f"z_max must be positive, got {self.z_max}")

    def contains(self, p) -> bool:
        return 0.0 <= p[2] <= self.z_max

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        z = points[:, 2]
        return (z >= 0.0) & (z <= self.z_max)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ConfigError("box corners must be 3-vectors")
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ConfigError(f"box min {self.lo} must be below max {self.hi} componentwise")

    def contains(self, p) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.lo, p, self.hi))

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= np.array(self.lo)) & (points <= np.array(self.hi)), axis=1)


GoalRegion = Union[Unconstrained, ZHeight, Box]

Z_HEIGHT = ZHeight(0.4)
CLOSE_BOX = Box((-0.45, -0.4, 0.0), (0.45, 0.4, 0.4))
FAR_BOX = Box((0.5, -0.4, 0.0), (0.9, 0.4, 0.4))
NAMED_REGIONS: dict[str, GoalRegion] = {
    "unconstrained": Unconstrained(),
    "z_height": Z_HEIGHT,
    "close_box": CLOSE_BOX,
    "far_box": FAR_BOX,
}


def contains(region: GoalRegion, p) -> bool:
    return region.contains(p)


def region_to_dict(region: GoalRegion) -> dict:
    if isinstance(region, Unconstrained):
        return {"type": "unconstrained"}
    if isinstance(region, ZHeight):
        return {"type": "z_height", "z_max": region.z_max}
    if isinstance(region, Box):
        return {"type": "box", "min": list(region.lo), "max": list(region.hi)}
    raise TypeError(f"not a goal region: {region!r}")


def region_from_dict(doc) -> GoalRegion:
    if isinstance(doc, str):
        try:
            return NAMED_REGIONS[doc]
        except KeyError:
            raise ConfigError(f"unknown region name {doc!r}; known: {sorted(NAMED_REGIONS)}") from None
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError("region: expected a name or a table with a 'type' field")
    kind = doc["type"]
    try:
        if kind in NAMED_REGIONS and len(doc) == 1:
            return NAMED_REGIONS[kind]
        if kind == "z_height":
            return ZHeight(float(doc["z_max"]))
        if kind == "box":
            return Box(tuple(doc["min"]), tuple(doc["max"]))
    except KeyError as exc:
        raise ConfigError(f"region {kind!r}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"region {kind!r}: {exc}") from None
    raise ConfigError(f"unknown region type {kind!r}")


# -- goals -------------------------------------------------------------------

@dataclass(frozen=True)
class Goal:
    position: np.ndarray
    generator_theta: np.ndarray


def _candidates(model: ArmModel, base: np.ndarray, rng, m: int) -> np.ndarray:
    n = model.n_active
    cand = np.tile(base, (m, 1))
    cand[:, :n] = rng.uniform(model.lower[:n], model.upper[:n], size=(m, n))
    return cand


def _screen(model: ArmModel, region: GoalRegion, cand: np.ndarray, floor) -> np.ndarray:
    pts = forward_kinematics(model, cand)
    ok = region.contains_many(pts)
    if floor is not None:
        ok &= pts[:, 2] >= floor
    return ok


def _confirm(model: ArmModel, region: GoalRegion, theta: np.ndarray, floor) -> Goal | None:
    # the answer comes from the single-vector path so that
    # fk(generator_theta) == position holds bitwise
    p = forward_kinematics(model, theta)
    if region.contains(p) and (floor is None or p[2] >= floor):
        return Goal(position=p, generator_theta=theta.copy())
    return None


def _start_vector(model: ArmModel, start_theta) -> np.ndarray:
    return np.zeros(model.n_joints) if start_theta is None else np.asarray(start_theta, dtype=float)


def sample_goal(
    model: ArmModel,
    region: GoalRegion,
    rng: np.random.Generator,
    start_theta=None,
    floor: float | None = 0.0,
    max_rejections: int = 100_000,
    chunk: int = 64,
) -> Goal:
    """Rejection-sample a reachable goal inside ``region``.

    Active joints are drawn uniformly within their limits, inactive joints stay
    at ``start_theta``. Candidates below ``floor`` (the plane the arm stands on)
    are rejected as well; pass ``floor=None`` to disable that check.
    """
    base = _start_vector(model, start_theta)
    tried = 0
    while tried < max_rejections:
        m = min(chunk, max_rejections - tried)
        cand = _candidates(model, base, rng, m)
        for i in np.flatnonzero(_screen(model, region, cand, floor)):
            goal = _confirm(model, region, cand[i], floor)
            if goal is not None:
                return goal
        tried += m
    raise InfeasibleRegionError(
        f"no goal inside {region_to_dict(region)} after {max_rejections} candidates"
    )


def sample_goals(
    model: ArmModel,
    region: GoalRegion,
    rng: np.random.Generator,
    count: int,
    start_theta=None,
    floor: float | None = 0.0,
    max_rejections: int = 100_000,
    chunk: int = 4096,
) -> list[Goal]:
    """``count`` goals from the same acceptance rule as :func:`sample_goal`.

    Candidates are screened in large blocks, which is far cheaper per goal
    than repeated single draws; the random stream therefore differs from
    ``count`` calls of :func:`sample_goal`.
    """
    base = _start_vector(model, start_theta)
    goals: list[Goal] = []
    since_last = 0
    while len(goals) < count:
        cand = _candidates(model, base, rng, chunk)
        for i in np.flatnonzero(_screen(model, region, cand, floor)):
            goal = _confirm(model, region, cand[i], floor)
            if goal is None:
                continue
            if since_last + i >= max_rejections:
                break
            goals.append(goal)
            since_last = -(i + 1)
            if len(goals) == count:
                return goals
        since_last += chunk
        if since_last >= max_rejections:
            raise InfeasibleRegionError(
                f"no goal inside {region_to_dict(region)} after {max_rejections} candidates"
            )
    return goals


def acceptance_rate(model: ArmModel, region: GoalRegion, rng, start_theta=None, floor=0.0, n=20_000) -> float:
    cand = _candidates(model, _start_vector(model, start_theta), rng, n)
    return float(_screen(model, region, cand, floor).mean())


# -- reward and motion ---------------------------------------------------------

def reward(ee, goal, action, epsilon: float, mode: str = "dense"):
    """Shaped reach reward, or just the success bonus when ``mode == "sparse"``.

    Works on single vectors or on stacked rows (last axis is the vector axis).
    """
    dist = np.linalg.norm(np.asarray(ee, dtype=float) - np.asarray(goal, dtype=float), axis=-1)
    bonus = np.where(dist <= epsilon, SUCCESS_BONUS, 0.0)
    if mode == "sparse":
        out = bonus
    elif mode == "dense":
        a = np.asarray(action, dtype=float)
        out = -dist - np.sum(a * a, axis=-1) + bonus
    else:
        raise ConfigError(f"unknown reward mode {mode!r}")
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class JointState:
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray

    def __post_init__(self):
        if not len(self.theta) == len(self.theta_dot) == len(self.theta_ddot):
            raise ValueError("theta, theta_dot and theta_ddot must have equal length")

    @classmethod
    def at_rest(cls, theta) -> "JointState":
        theta = np.array(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta))


def integrate_joints(state: JointState, command, dt: float, omega_max: float) -> JointState:
    """Move the leading ``len(command)`` joints toward ``command`` at bounded speed."""
    command = np.asarray(command, dtype=float)
    n = len(command)
    limit = omega_max * dt
    theta = state.theta.copy()
    delta = np.clip(command - theta[:n], -limit, limit)
    arrived = np.abs(command - theta[:n]) <= limit
    theta[:n] = np.where(arrived, command, theta[:n] + delta)
    theta_dot = np.zeros_like(theta)
    theta_dot[:n] = (theta[:n] - state.theta[:n]) / dt
    theta_ddot = np.zeros_like(theta)
    theta_ddot[:n] = (theta_dot[:n] - state.theta_dot[:n]) / dt
    return JointState(theta, theta_dot, theta_ddot)


# -- environment -------------------------------------------------------------

@dataclass(frozen=True)
class EnvConfig:
    region: GoalRegion = field(default_factory=Unconstrained)
    n_active: int = 6
    epsilon: float = 0.1
    max_steps: int = 100
    dt: float = 0.02
    omega_max: float = math.pi
    reward_mode: str = "dense"
    start_theta: tuple[float, ...] | None = None
    floor: float | None = 0.0
    max_rejections: int = 100_000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.omega_max > 0:
            raise ConfigError("omega_max must be positive")
        if self.reward_mode not in ("dense", "sparse"):
            raise ConfigError(f"reward_mode must be 'dense' or 'sparse', got {self.reward_mode!r}")
        if self.start_theta is not None:
            object.__setattr__(self, "start_theta", tuple(float(v) for v in self.start_theta))

    def start_for(self, n_joints: int) -> np.ndarray:
        if self.start_theta is not None:
            if len(self.start_theta) != n_joints:
                raise ConfigError(f"start_theta has {len(self.start_theta)} values, arm has {n_joints} joints")
            return np.array(self.start_theta)
        default = UNCONSTRAINED_START if isinstance(self.region, Unconstrained) else CONSTRAINED_START
        out = np.zeros(n_joints)
        k = min(n_joints, len(default))
        out[:k] = default[:k]
        return out

    @property
    def obs_dim(self) -> int:
        return 3 * self.n_active + 6


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    success: bool
    truncated: bool


class ReacherEnv:
    def __init__(self, model: ArmModel, config: EnvConfig, seed=None):
        self.model = restrict_active(model, config.n_active)
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.start = self.model.clamp(config.start_for(self.model.n_joints))
        self.lower = self.model.lower[: config.n_active]
        self.upper = self.model.upper[: config.n_active]
        self.state: JointState | None = None
        self.goal: Goal | None = None
        self.ee: np.ndarray | None = None
        self.steps = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def act_dim(self) -> int:
        return self.config.n_active

    def sample_goal(self, rng=None) -> Goal:
        return sample_goal(
            self.model,
            self.config.region,
            self.rng if rng is None else rng,
            start_theta=self.start,
            floor=self.config.floor,
            max_rejections=self.config.max_rejections,
        )

    def sample_goals(self, count: int, rng=None) -> list[Goal]:
        return sample_goals(
            self.model,
            self.config.region,
            self.rng if rng is None else rng,
            count,
            start_theta=self.start,
            floor=self.config.floor,
            max_rejections=self.config.max_rejections,
        )

    def reset(self, rng=None, goal: Goal | None = None) -> np.ndarray:
        self.goal = self.sample_goal(rng) if goal is None else goal
        self.state = JointState.at_rest(self.start)
        self.ee = forward_kinematics(self.model, self.state.theta)
        self.steps = 0
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        n = self.config.n_active
        g = self.goal.position
        return np.concatenate(
            [self.state.theta[:n], self.state.theta_dot[:n], self.state.theta_ddot[:n], g - self.ee, g]
        )

    def step(self, action) -> StepResult:
        if self.done:
            raise ProtocolError("episode has terminated; call reset() first")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.config.n_active,):
            raise ValueError(f"action must have shape ({self.config.n_active},), got {action.shape}")
        action = np.clip(action, self.lower, self.upper)
        cfg = self.config
        self.state = integrate_joints(self.state, action, cfg.dt, cfg.omega_max)
        self.ee = forward_kinematics(self.model, self.state.theta)
        self.steps += 1
        dist = float(np.linalg.norm(self.ee - self.goal.position))
        success = dist <= cfg.epsilon
        r = reward(self.ee, self.goal.position, action, cfg.epsilon, cfg.reward_mode)
        truncated = not success and self.steps >= cfg.max_steps
        self.done = success or truncated
        return StepResult(self.observation(), r, success, truncated)

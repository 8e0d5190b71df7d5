"""Post-hoc analysis: learning-curve tables and policy success maps over a z slice."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .arm import ArmModel
from .env import EnvConfig, ReacherEnv
from .harness import CurvePoint, Policy, as_policy, run_episode

log = logging.getLogger(__name__)

CURVE_HEADER = ("episode_index", "mean", "ci_low", "ci_high")
GRID_HEADER = ("ix", "iy", "x_lo", "x_hi", "y_lo", "y_hi", "attempts", "successes", "rate")


@dataclass
class SuccessGrid:
    """Sparse (x, y) tiling of goals whose z falls in ``z_slice``."""

    cell_size: float
    z_slice: tuple[float, float]
    cells: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell size must be positive, got {self.cell_size}")
        lo, hi = self.z_slice
        if not lo < hi:
            raise ValueError(f"slice needs z_lo < z_hi, got {self.z_slice}")
        self.z_slice = (float(lo), float(hi))

    def in_slice(self, p) -> bool:
        return self.z_slice[0] <= p[2] <= self.z_slice[1]

    def cell_of(self, p) -> tuple[int, int]:
        return math.floor(p[0] / self.cell_size), math.floor(p[1] / self.cell_size)

    def add(self, p, success: bool) -> None:
        counts = self.cells.setdefault(self.cell_of(p), [0, 0])
        counts[0] += 1
        counts[1] += int(success)

    def merge(self, other: "SuccessGrid") -> "SuccessGrid":
        if (other.cell_size, other.z_slice) != (self.cell_size, self.z_slice):
            raise ValueError("can only merge grids with the same cell size and slice")
        out = SuccessGrid(self.cell_size, self.z_slice, {k: list(v) for k, v in self.cells.items()})
        for key, (att, suc) in other.cells.items():
            counts = out.cells.setdefault(key, [0, 0])
            counts[0] += att
            counts[1] += suc
        return out

    @property
    def attempts(self) -> int:
        return sum(v[0] for v in self.cells.values())

    @property
    def successes(self) -> int:
        return sum(v[1] for v in self.cells.values())


def success_region_map(
    policy,
    model: ArmModel,
    env_config: EnvConfig,
    n_samples: int = 10_000,
    cell: float = 0.1,
    z_slice: tuple[float, float] = (0.7, 0.8),
    rng=None,
) -> SuccessGrid:
    """Sample goals with the environment sampler and test the policy on those in the slice.

    ``policy`` is an :class:`~reacherbench.agent.Agent` (run without noise) or
    any callable ``(obs, env) -> action``. Goals outside the slice count toward
    ``n_samples`` but are never simulated.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(rng)
    grid = SuccessGrid(cell, tuple(z_slice))
    env = ReacherEnv(model, env_config)
    act: Policy = as_policy(policy)
    for goal in env.sample_goals(n_samples, rng):
        if not grid.in_slice(goal.position):
            continue
        ok, _ = run_episode(act, env, goal=goal)
        grid.add(goal.position, ok)
    return grid


def write_grid(grid: SuccessGrid, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GRID_HEADER)
            c = grid.cell_size
            for (ix, iy), (att, suc) in sorted(grid.cells.items()):
                w.writerow([ix, iy, repr(ix * c), repr((ix + 1) * c), repr(iy * c), repr((iy + 1) * c),
                            att, suc, repr(suc / att)])
    except OSError as exc:
        raise OSError(f"cannot write grid to {path}: {exc.strerror or exc}") from exc


def read_grid(path, cell_size: float, z_slice=(0.7, 0.8)) -> SuccessGrid:
    grid = SuccessGrid(cell_size, tuple(z_slice))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            grid.cells[(int(row["ix"]), int(row["iy"]))] = [int(row["attempts"]), int(row["successes"])]
    return grid


def emit_curve(curve: Sequence[CurvePoint], path) -> None:
    """Write an aggregated curve as CSV; ``repr`` keeps floats round-trippable."""
    path = Path(path)
    if not curve:
        log.warning("no sessions to emit; writing header only to %s", path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CURVE_HEADER)
            for p in curve:
                w.writerow([p.episode_index, repr(p.mean), repr(p.ci_low), repr(p.ci_high)])
    except OSError as exc:
        raise OSError(f"cannot write curve to {path}: {exc.strerror or exc}") from exc


def read_curve(path) -> list[tuple[int, float, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CURVE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]

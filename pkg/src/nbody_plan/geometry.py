"""Ground-plane body geometry and trajectory arithmetic.

Each agent is an oriented rectangle centred on its XY position: ``depth``
along the heading ``(cos yaw, sin yaw)``, ``width`` across it. The z
coordinate is ignored everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .annotations import PoseSample, Trajectory
from .core import ParallelPlan, PlanError, require_valid

__all__ = [
    "BodyBox",
    "DEFAULT_BOX",
    "is_collide",
    "collide_arrays",
    "agent_pose_at",
    "walking_distance",
    "GridGeometry",
    "MixtureGeometry",
    "ZoneOccupancy",
    "occupancy_runs",
]


@dataclass(frozen=True)
class BodyBox:
    width: float = 0.46
    depth: float = 0.25

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise ValueError(f"box dimensions must be positive, got {self.width} x {self.depth}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.depth)


DEFAULT_BOX = BodyBox()


def collide_arrays(xy_a, yaw_a, xy_b, yaw_b, box: BodyBox = DEFAULT_BOX) -> np.ndarray:
    """Vectorised separating-axis test over paired pose arrays.

    Rectangles that only touch along an edge do not collide.
    """
    xy_a = np.asarray(xy_a, dtype=float).reshape(-1, 2)
    xy_b = np.asarray(xy_b, dtype=float).reshape(-1, 2)
    yaw_a = np.asarray(yaw_a, dtype=float).reshape(-1)
    yaw_b = np.asarray(yaw_b, dtype=float).reshape(-1)
    d = xy_b - xy_a
    hw, hd = box.width / 2.0, box.depth / 2.0

    fa = np.stack([np.cos(yaw_a), np.sin(yaw_a)], axis=1)
    la = np.stack([-fa[:, 1], fa[:, 0]], axis=1)
    fb = np.stack([np.cos(yaw_b), np.sin(yaw_b)], axis=1)
    lb = np.stack([-fb[:, 1], fb[:, 0]], axis=1)

    def rowdot(u, v):
        return np.einsum("ij,ij->i", u, v)

    separated = np.zeros(len(d), dtype=bool)
    for axis in (fa, la, fb, lb):
        ra = hd * np.abs(rowdot(fa, axis)) + hw * np.abs(rowdot(la, axis))
        rb = hd * np.abs(rowdot(fb, axis)) + hw * np.abs(rowdot(lb, axis))
        separated |= np.abs(rowdot(d, axis)) >= ra + rb
    return ~separated


def is_collide(pose_a: PoseSample, pose_b: PoseSample, box: BodyBox = DEFAULT_BOX) -> bool:
    return bool(collide_arrays(pose_a.position[:2], pose_a.yaw, pose_b.position[:2], pose_b.yaw, box)[0])


def agent_pose_at(plan: ParallelPlan, traj: Trajectory, agent: int, plan_frame: int) -> Optional[PoseSample]:
    """Source pose the agent reproduces at ``plan_frame``; None while idle or when the pose is absent."""
    require_valid(plan)
    if not 1 <= agent <= plan.n_agents:
        raise PlanError(f"unknown agent {agent}; plan has {plan.n_agents}")
    for a in plan.assignments:
        if a.agent == agent and a.plan_start <= plan_frame < a.plan_end:
            return traj.pose(a.segment.start + plan_frame - a.plan_start)
    return None


def walking_distance(traj: Trajectory, frames: Iterable[int]) -> float:
    """XY path length inside each run of consecutive frames; gaps and absent poses add nothing."""
    idx = np.unique(np.fromiter(frames, dtype=np.int64))
    if len(idx) < 2:
        return 0.0
    idx = idx[(idx >= 0) & (idx < len(traj))]
    prev, cur = idx[:-1], idx[1:]
    keep = (cur - prev == 1) & traj.present[prev] & traj.present[cur]
    steps = traj.xy[cur[keep]] - traj.xy[prev[keep]]
    return float(np.hypot(steps[:, 0], steps[:, 1]).sum())


@dataclass(frozen=True)
class GridGeometry:
    anchor: tuple[float, float]
    cell_size: float
    cells: tuple[tuple[int, int], ...]  # integer cell coordinates per zone id

    def describe(self) -> list[str]:
        return [f"zones: grid cell_size={self.cell_size!r} m anchor=({self.anchor[0]!r}, {self.anchor[1]!r})"]


@dataclass(frozen=True)
class MixtureGeometry:
    means: tuple[tuple[float, float], ...]  # per zone id
    covariances: tuple[tuple[tuple[float, float], tuple[float, float]], ...]
    weights: tuple[float, ...]
    seed: Optional[int] = None
    max_iter: int = 100

    def describe(self) -> list[str]:
        lines = [f"zones: gmm components={len(self.means)} seed={self.seed} max_iter={self.max_iter}"]
        for z, (m, c, w) in enumerate(zip(self.means, self.covariances, self.weights)):
            lines.append(f"zone {z}: weight={w:.6g} mean=({m[0]:.6g}, {m[1]:.6g}) "
                         f"cov=[[{c[0][0]:.6g}, {c[0][1]:.6g}], [{c[1][0]:.6g}, {c[1][1]:.6g}]]")
        return lines


@dataclass(frozen=True)
class ZoneOccupancy:
    triplets: tuple[tuple[int, int, int], ...]
    geometry: Union[GridGeometry, MixtureGeometry, None] = None

    def __post_init__(self):
        object.__setattr__(self, "triplets", tuple(tuple(int(v) for v in t) for t in self.triplets))

    def __len__(self) -> int:
        return len(self.triplets)

    @property
    def n_zones(self) -> int:
        return len({z for _, _, z in self.triplets})

    def check(self, traj: Optional[Trajectory] = None) -> list[str]:
        """Problems with the partition invariants (empty list when sound)."""
        problems = []
        prev = None
        for k, (s, e, z) in enumerate(self.triplets):
            if e <= s:
                problems.append(f"triplet {k} is empty")
            if prev is not None:
                ps, pe, pz = prev
                if s < pe:
                    problems.append(f"triplet {k} overlaps or is out of order")
                elif s == pe and z == pz:
                    problems.append(f"triplets {k - 1} and {k} are adjacent with the same zone")
            prev = (s, e, z)
        if traj is not None:
            covered = np.zeros(len(traj), dtype=bool)
            for s, e, _ in self.triplets:
                covered[s:min(e, len(traj))] = True
                if e > len(traj):
                    problems.append(f"triplet ({s}, {e}) extends past the trajectory")
            if not np.array_equal(covered, traj.present):
                problems.append("triplets do not exactly cover the pose-bearing frames")
        return problems


def occupancy_runs(frames: np.ndarray, labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Merge per-frame labels into maximal runs; a run also ends at any frame gap."""
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    if len(frames) == 0:
        return []
    breaks = np.flatnonzero((np.diff(frames) != 1) | (np.diff(labels) != 0)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(frames)]])
    return [(int(frames[s]), int(frames[e - 1]) + 1, int(labels[s])) for s, e in zip(starts, ends)]

"""Timeline, segment and parallel-plan algebra.

A plan binds half-open source-frame segments ``[start, end)`` to agents
(1-based) at a start frame on a shared plan clock that begins at 0.
Everything is stored as integer frames; seconds only appear at I/O.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "PlanError",
    "Timeline",
    "Segment",
    "Assignment",
    "ParallelPlan",
    "Violation",
    "validate_plan",
    "plan_makespan",
    "assigned_mask",
    "map_source_to_plan",
    "agent_frame_maps",
]


class PlanError(ValueError):
    """Raised when an operation receives an invalid plan or argument."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


def as_fps(value) -> Fraction:
    """Coerce ``value`` (int, float, str or Fraction) into a positive Fraction."""
    if isinstance(value, Fraction):
        fps = value
    elif isinstance(value, float):
        fps = Fraction(repr(value))
    else:
        fps = Fraction(value)
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {value!r}")
    return fps


@dataclass(frozen=True)
class Timeline:
    length_frames: int
    fps: Fraction = Fraction(1)

    def __post_init__(self):
        if int(self.length_frames) != self.length_frames or self.length_frames < 1:
            raise ValueError(f"length_frames must be a positive integer, got {self.length_frames!r}")
        object.__setattr__(self, "length_frames", int(self.length_frames))
        object.__setattr__(self, "fps", as_fps(self.fps))

    @property
    def duration_seconds(self) -> Fraction:
        return self.length_frames / self.fps


@dataclass(frozen=True, order=True)
class Segment:
    """Half-open source-frame interval."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid segment [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlap(self, other: "Segment") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def iou(self, other: "Segment") -> Fraction:
        inter = self.overlap(other)
        if inter == 0:
            return Fraction(0)
        return Fraction(inter, self.length + other.length - inter)

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class Assignment:
    segment: Segment
    agent: int
    plan_start: int

    @property
    def plan_end(self) -> int:
        return self.plan_start + self.segment.length

    def to_plan(self, t: int) -> int:
        return self.plan_start + (t - self.segment.start)


@dataclass(frozen=True)
class Violation:
    kind: str
    assignments: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class ParallelPlan:
    """N agents' assignment lists over a shared plan clock.

    Construction never fails on broken invariants; those are reported by
    :func:`validate_plan` and cached on :attr:`violations` so that loaded
    plans can be inspected before scoring.
    """

    n_agents: int
    assignments: tuple[Assignment, ...]
    timeline: Timeline
    video_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        object.__setattr__(self, "assignments", tuple(self.assignments))

    @classmethod
    def from_tuples(cls, timeline: Timeline, n_agents: int,
                    rows: Iterable[tuple[int, int, int, int]], video_id=None) -> "ParallelPlan":
        """Build from ``(source_start, source_end, agent, plan_start)`` rows."""
        assignments = tuple(Assignment(Segment(s, e), a, tau) for s, e, a, tau in rows)
        return cls(n_agents, assignments, timeline, video_id)

    @cached_property
    def violations(self) -> list[Violation]:
        return validate_plan(self)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def agent_assignments(self, agent: int) -> list[Assignment]:
        """Assignments of ``agent`` in plan-start order."""
        return sorted((a for a in self.assignments if a.agent == agent), key=lambda a: a.plan_start)

    @property
    def total_assigned(self) -> int:
        return sum(a.segment.length for a in self.assignments)


def _overlapping_pairs(intervals: list[tuple[int, int, int]]) -> list[tuple[int, int]]:
    # intervals: (start, end, idx); sweep over starts keeping the active set.
    pairs = []
    active: list[tuple[int, int]] = []
    for start, end, idx in sorted(intervals):
        active = [(e, j) for e, j in active if e > start]
        pairs.extend((j, idx) for _, j in active)
        active.append((end, idx))
    return pairs


def validate_plan(plan: ParallelPlan) -> list[Violation]:
    """Return every broken plan invariant; an empty list means the plan is valid."""
    report: list[Violation] = []
    T = plan.timeline.length_frames
    for i, a in enumerate(plan.assignments):
        if a.segment.end > T:
            report.append(Violation("segment_bounds", (i,),
                                    f"segment [{a.segment.start}, {a.segment.end}) exceeds timeline of {T} frames"))
        if not 1 <= a.agent <= plan.n_agents:
            report.append(Violation("agent_range", (i,), f"agent {a.agent} outside [1, {plan.n_agents}]"))
        if a.plan_start < 0:
            report.append(Violation("plan_start", (i,), f"negative plan start {a.plan_start}"))

    for i, j in _overlapping_pairs([(a.segment.start, a.segment.end, i) for i, a in enumerate(plan.assignments)]):
        i, j = min(i, j), max(i, j)
        si, sj = plan.assignments[i].segment, plan.assignments[j].segment
        if si == sj:
            report.append(Violation("single_ownership", (i, j),
                                    f"segment [{si.start}, {si.end}) assigned more than once"))
        else:
            report.append(Violation("source_overlap", (i, j),
                                    f"source segments [{si.start}, {si.end}) and [{sj.start}, {sj.end}) overlap"))

    by_agent: dict[int, list[tuple[int, int, int]]] = {}
    for i, a in enumerate(plan.assignments):
        by_agent.setdefault(a.agent, []).append((a.plan_start, a.plan_end, i))
    for agent in sorted(by_agent):
        for i, j in _overlapping_pairs(by_agent[agent]):
            i, j = min(i, j), max(i, j)
            report.append(Violation("agent_overlap", (i, j),
                                    f"agent {agent} runs assignments {i} and {j} at the same plan frames"))
    return report


def require_valid(plan: ParallelPlan) -> None:
    if plan.violations:
        first = plan.violations[0]
        raise PlanError(f"invalid plan ({len(plan.violations)} violations; first: {first.message})",
                        plan.violations)


def plan_makespan(plan: ParallelPlan) -> int:
    require_valid(plan)
    return max((a.plan_end for a in plan.assignments), default=0)


def assigned_mask(plan: ParallelPlan) -> np.ndarray:
    mask = np.zeros(plan.timeline.length_frames, dtype=bool)
    for a in plan.assignments:
        mask[a.segment.start:a.segment.end] = True
    return mask


def map_source_to_plan(plan: ParallelPlan, t: int) -> Optional[tuple[int, int]]:
    """Return ``(agent, plan_frame)`` executing source frame ``t``, or None if unassigned."""
    if not 0 <= t < plan.timeline.length_frames:
        raise PlanError(f"source frame {t} outside [0, {plan.timeline.length_frames})")
    for a in plan.assignments:
        if t in a.segment:
            return a.agent, a.to_plan(t)
    return None


def source_maps(plan: ParallelPlan) -> tuple[np.ndarray, np.ndarray]:
    """Per-source-frame agent (0 = unassigned) and plan frame (-1 = unassigned)."""
    T = plan.timeline.length_frames
    agent = np.zeros(T, dtype=np.int64)
    plan_frame = np.full(T, -1, dtype=np.int64)
    for a in plan.assignments:
        s, e = a.segment.start, a.segment.end
        agent[s:e] = a.agent
        plan_frame[s:e] = np.arange(a.plan_start, a.plan_end)
    return agent, plan_frame


def agent_frame_maps(plan: ParallelPlan, makespan: Optional[int] = None) -> np.ndarray:
    """``(n_agents, makespan)`` array of the source frame each agent executes; -1 while idle."""
    if makespan is None:
        makespan = plan_makespan(plan)
    out = np.full((plan.n_agents, makespan), -1, dtype=np.int64)
    for a in plan.assignments:
        out[a.agent - 1, a.plan_start:a.plan_end] = np.arange(a.segment.start, a.segment.end)
    return out

"""Goal and constraint metrics for a parallel plan, and their aggregation.

Rates are returned as exact :class:`~fractions.Fraction` values; only the
jump and walking distances are floats. Denominators follow the plan
clock: collision and object-conflict rates divide by the makespan,
including frames where agents idle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import CAUSAL_KINDS, ActionRecord, AnnotationSet, CausalPair, ObjectTrackSet, Trajectory
from .core import ParallelPlan, PlanError, Timeline, agent_frame_maps, plan_makespan, require_valid, source_maps
from .geometry import DEFAULT_BOX, BodyBox, collide_arrays, walking_distance

__all__ = [
    "ACTION_VARIANTS",
    "AgentStats",
    "MetricReport",
    "frame_coverage",
    "action_coverage",
    "speed_up",
    "collision_counts",
    "collision_rate",
    "jump_distance",
    "object_conflict_rate",
    "classify_pairs",
    "causality_violation_rate",
    "evaluate_all",
    "aggregate",
    "report_to_dict",
    "report_from_dict",
    "format_table",
]

# "fraction": some single agent holds >= half of the action's frames.
# "segment-iou": some assigned segment has IoU >= 0.5 with the action.
ACTION_VARIANTS = ("fraction", "segment-iou")
RATE_FIELDS = ("frame_coverage", "action_coverage", "collision_rate", "ocr", "cvr")


@dataclass(frozen=True)
class AgentStats:
    agent: int
    busy_frames: int
    n_segments: int
    walking_m: float


@dataclass(frozen=True)
class MetricReport:
    frame_coverage: Fraction
    action_coverage: Fraction
    speed_up: Fraction
    collision_rate: Fraction
    jump_m: float
    ocr: Fraction
    cvr: Fraction
    cvr_breakdown: dict
    per_agent: tuple = ()
    n_agents: int = 1
    makespan: int = 0
    assigned_frames: int = 0
    length_frames: int = 0
    n_actions: int = 0
    n_pairs: int = 0
    flags: dict = field(default_factory=dict)
    video_id: Optional[str] = None

    @property
    def n_violations(self) -> int:
        return sum(sum(v.values()) for v in self.cvr_breakdown.values())


def _timeline(plan: ParallelPlan, timeline: Optional[Timeline]) -> Timeline:
    if timeline is not None and timeline.length_frames != plan.timeline.length_frames:
        raise PlanError(f"plan timeline ({plan.timeline.length_frames} frames) differs from "
                        f"{timeline.length_frames}")
    return timeline or plan.timeline


def frame_coverage(plan: ParallelPlan, timeline: Optional[Timeline] = None) -> Fraction:
    require_valid(plan)
    tl = _timeline(plan, timeline)
    return Fraction(plan.total_assigned, tl.length_frames)


def speed_up(plan: ParallelPlan, timeline: Optional[Timeline] = None) -> Fraction:
    _timeline(plan, timeline)
    makespan = plan_makespan(plan)
    if makespan == 0:
        raise PlanError("speed-up is undefined for an empty plan")
    return Fraction(plan.total_assigned, makespan)


def action_coverage(plan: ParallelPlan, actions: Sequence[ActionRecord], variant: str = "fraction") -> Fraction:
    """Share of actions covered by the plan; 1 for an empty action list."""
    require_valid(plan)
    if variant not in ACTION_VARIANTS:
        raise ValueError(f"unknown action-coverage variant {variant!r}; choose from {ACTION_VARIANTS}")
    if not actions:
        return Fraction(1)
    T = plan.timeline.length_frames
    covered = 0
    if variant == "fraction":
        agent_map, _ = source_maps(plan)
        for act in actions:
            s, e = act.interval.start, min(act.interval.end, T)
            counts = np.bincount(agent_map[s:e], minlength=plan.n_agents + 1)[1:] if e > s else [0]
            if 2 * int(np.max(counts)) >= act.interval.length:
                covered += 1
    else:
        segments = [a.segment for a in plan.assignments]
        for act in actions:
            if any(2 * seg.iou(act.interval) >= 1 for seg in segments):
                covered += 1
    return Fraction(covered, len(actions))


def _source_pose_arrays(traj: Trajectory, src: np.ndarray):
    """XY, yaw and presence for source frames ``src`` (-1 and out-of-range -> absent)."""
    n = len(traj)
    inside = (src >= 0) & (src < n)
    if n == 0:
        return np.zeros(src.shape + (2,)), np.zeros(src.shape), inside
    safe = np.where(inside, src, 0)
    return traj.xy[safe], traj.yaw[safe], inside & traj.present[safe]


def collision_counts(plan: ParallelPlan, traj: Trajectory, box: BodyBox = DEFAULT_BOX) -> tuple[int, int, int]:
    """``(colliding frames, counted frames, frames skipped for a missing pose)``.

    A plan frame is skipped when any agent active at that frame has no
    source pose; skipped frames leave both numerator and denominator.
    """
    makespan = plan_makespan(plan)
    if makespan == 0:
        return 0, 0, 0
    maps = agent_frame_maps(plan, makespan)
    active = maps >= 0
    xy, yaw, present = _source_pose_arrays(traj, maps)
    missing = (active & ~present).any(axis=0)
    hit = np.zeros(makespan, dtype=bool)
    for i in range(plan.n_agents):
        for j in range(i + 1, plan.n_agents):
            both = np.flatnonzero(active[i] & active[j] & ~missing)
            if len(both):
                hit[both] |= collide_arrays(xy[i, both], yaw[i, both], xy[j, both], yaw[j, both], box)
    n_missing = int(missing.sum())
    return int(hit.sum()), makespan - n_missing, n_missing


def collision_rate(plan: ParallelPlan, traj: Trajectory, box: BodyBox = DEFAULT_BOX) -> Fraction:
    hits, counted, _ = collision_counts(plan, traj, box)
    return Fraction(hits, counted) if counted else Fraction(0)


def _jump_terms(plan: ParallelPlan, traj: Trajectory) -> tuple[list[float], int]:
    per_agent = []
    skipped = 0
    for agent in range(1, plan.n_agents + 1):
        segs = plan.agent_assignments(agent)
        if not segs:
            continue
        total = 0.0
        for prev, nxt in zip(segs, segs[1:]):
            end_pose, start_pose = traj.pose(prev.segment.end - 1), traj.pose(nxt.segment.start)
            if end_pose is None or start_pose is None:
                skipped += 1
                continue
            total += float(np.hypot(start_pose.position[0] - end_pose.position[0],
                                    start_pose.position[1] - end_pose.position[1]))
        # divisor is the segment count, not the jump count
        per_agent.append(total / len(segs))
    return per_agent, skipped


def jump_distance(plan: ParallelPlan, traj: Trajectory) -> float:
    """Mean over working agents of (summed relocation between consecutive segments) / (segment count)."""
    require_valid(plan)
    per_agent, _ = _jump_terms(plan, traj)
    return sum(per_agent) / len(per_agent) if per_agent else 0.0


def object_conflict_rate(plan: ParallelPlan, tracks: ObjectTrackSet) -> Fraction:
    makespan = plan_makespan(plan)
    if makespan == 0 or plan.n_agents < 2:
        return Fraction(0)
    agent_map, plan_frame = source_maps(plan)
    T = len(agent_map)
    conflict = np.zeros(makespan, dtype=bool)
    for _, intervals in tracks.items():
        src = np.concatenate([np.arange(iv.start, min(iv.end, T)) for iv in intervals])
        src = src[agent_map[src] > 0] if len(src) else src
        if len(src) == 0:
            continue
        held = np.zeros((plan.n_agents, makespan), dtype=bool)
        held[agent_map[src] - 1, plan_frame[src]] = True
        conflict |= held.sum(axis=0) >= 2
    return Fraction(int(conflict.sum()), makespan)


def classify_pairs(plan: ParallelPlan, pairs: Sequence[CausalPair]) -> list[str]:
    """Outcome per pair: ``"ok"``, ``"reverse"`` or ``"miss"``.

    An interval is present when at least half of its frames are assigned.
    A missing cause is a miss; a present cause whose last plan frame is not
    strictly before the effect's first plan frame is a reversal (this also
    covers parallel overlap). An absent effect with a present cause is ok.
    """
    require_valid(plan)
    agent_map, plan_frame = source_maps(plan)
    T = len(agent_map)

    def placed(seg):
        idx = np.arange(seg.start, min(seg.end, T))
        frames = plan_frame[idx[agent_map[idx] > 0]] if len(idx) else idx
        if 2 * len(frames) < seg.length:
            return None
        return int(frames.min()), int(frames.max()) + 1

    out = []
    for pair in pairs:
        cause = placed(pair.cause)
        if cause is None:
            out.append("miss")
            continue
        effect = placed(pair.effect)
        if effect is not None and cause[1] > effect[0]:
            out.append("reverse")
        else:
            out.append("ok")
    return out


def causality_violation_rate(plan: ParallelPlan, pairs: Sequence[CausalPair]) -> tuple[Fraction, dict]:
    """Violated share of causal pairs plus ``{kind: {"reverse": n, "miss": n}}`` counts.

    An empty pair list yields 0.
    """
    outcomes = classify_pairs(plan, pairs)
    breakdown = {kind: {"reverse": 0, "miss": 0} for kind in CAUSAL_KINDS}
    for pair, outcome in zip(pairs, outcomes):
        if outcome != "ok":
            breakdown[pair.kind][outcome] += 1
    violated = sum(o != "ok" for o in outcomes)
    return (Fraction(violated, len(pairs)) if pairs else Fraction(0)), breakdown


def evaluate_all(plan: ParallelPlan, annotations: AnnotationSet, traj: Trajectory,
                 box: BodyBox = DEFAULT_BOX, action_variant: str = "fraction") -> MetricReport:
    require_valid(plan)
    makespan = plan_makespan(plan)
    flags = {}
    if not annotations.actions:
        flags["no_actions"] = 1
    if not annotations.pairs:
        flags["no_causal_pairs"] = 1
    if not len(annotations.tracks):
        flags["no_object_tracks"] = 1
    hits, counted, missing = collision_counts(plan, traj, box)
    if missing:
        flags["collision_frames_missing_pose"] = missing
    _, skipped_jumps = _jump_terms(plan, traj)
    if skipped_jumps:
        flags["jumps_missing_pose"] = skipped_jumps
    cvr, breakdown = causality_violation_rate(plan, annotations.pairs)

    per_agent = []
    for agent in range(1, plan.n_agents + 1):
        segs = plan.agent_assignments(agent)
        frames = [t for a in segs for t in range(a.segment.start, a.segment.end)]
        per_agent.append(AgentStats(agent, sum(a.segment.length for a in segs), len(segs),
                                    walking_distance(traj, frames)))

    return MetricReport(
        frame_coverage=frame_coverage(plan),
        action_coverage=action_coverage(plan, annotations.actions, action_variant),
        speed_up=speed_up(plan) if makespan else Fraction(0),
        collision_rate=Fraction(hits, counted) if counted else Fraction(0),
        jump_m=jump_distance(plan, traj),
        ocr=object_conflict_rate(plan, annotations.tracks),
        cvr=cvr,
        cvr_breakdown=breakdown,
        per_agent=tuple(per_agent),
        n_agents=plan.n_agents,
        makespan=makespan,
        assigned_frames=plan.total_assigned,
        length_frames=plan.timeline.length_frames,
        n_actions=len(annotations.actions),
        n_pairs=len(annotations.pairs),
        flags=flags,
        video_id=plan.video_id,
    )


# -- aggregation and serialisation ------------------------------------------------

def aggregate(reports: Sequence[MetricReport]) -> dict:
    """Per-metric means over videos.

    CVR is averaged only over reports that had causal pairs; the breakdown
    counts are summed.
    """
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    n = len(reports)
    out = {"n_videos": n}
    for name in ("frame_coverage", "action_coverage", "speed_up", "collision_rate", "ocr"):
        out[name] = sum((getattr(r, name) for r in reports), Fraction(0)) / n
    out["jump_m"] = sum(r.jump_m for r in reports) / n
    with_pairs = [r for r in reports if r.n_pairs > 0]
    out["n_videos_cvr"] = len(with_pairs)
    out["cvr"] = (sum((r.cvr for r in with_pairs), Fraction(0)) / len(with_pairs)) if with_pairs else None
    totals = {kind: {"reverse": 0, "miss": 0} for kind in CAUSAL_KINDS}
    for r in reports:
        for kind, counts in r.cvr_breakdown.items():
            for cat, v in counts.items():
                totals[kind][cat] += v
    out["cvr_breakdown"] = totals
    out["n_pairs"] = sum(r.n_pairs for r in reports)
    return out


def _pct(x) -> Optional[float]:
    return None if x is None else round(float(x) * 100, 2)


def table_row(values) -> dict:
    """Table-style view: rates as percentages, everything to two decimals."""
    get = values.get if isinstance(values, dict) else (lambda k: getattr(values, k))
    return {
        "coverage_pct": _pct(get("frame_coverage")),
        "action_coverage_pct": _pct(get("action_coverage")),
        "speed_up": round(float(get("speed_up")), 2),
        "collision_rate_pct": _pct(get("collision_rate")),
        "jump_m": round(float(get("jump_m")), 2),
        "ocr_pct": _pct(get("ocr")),
        "cvr_pct": _pct(get("cvr")),
    }


def report_to_dict(report: MetricReport) -> dict:
    exact = {name: str(getattr(report, name)) for name in RATE_FIELDS + ("speed_up",)}
    exact["jump_m"] = report.jump_m
    return {
        "video_id": report.video_id,
        "n_agents": report.n_agents,
        "length_frames": report.length_frames,
        "makespan": report.makespan,
        "assigned_frames": report.assigned_frames,
        "n_actions": report.n_actions,
        "n_pairs": report.n_pairs,
        "table": table_row(report),
        "exact": exact,
        "cvr_breakdown": report.cvr_breakdown,
        "per_agent": [
            {"agent": s.agent, "busy_frames": s.busy_frames, "n_segments": s.n_segments, "walking_m": s.walking_m}
            for s in report.per_agent
        ],
        "flags": report.flags,
    }


def report_from_dict(doc: dict) -> MetricReport:
    exact = doc["exact"]
    return MetricReport(
        **{name: Fraction(exact[name]) for name in RATE_FIELDS + ("speed_up",)},
        jump_m=float(exact["jump_m"]),
        cvr_breakdown={k: dict(v) for k, v in doc["cvr_breakdown"].items()},
        per_agent=tuple(AgentStats(**s) for s in doc.get("per_agent", [])),
        n_agents=doc["n_agents"],
        makespan=doc["makespan"],
        assigned_frames=doc["assigned_frames"],
        length_frames=doc["length_frames"],
        n_actions=doc["n_actions"],
        n_pairs=doc["n_pairs"],
        flags=dict(doc.get("flags", {})),
        video_id=doc.get("video_id"),
    )


def summary_to_dict(summary: dict) -> dict:
    exact = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in summary.items()
             if k in RATE_FIELDS + ("speed_up", "jump_m")}
    return {
        "n_videos": summary["n_videos"],
        "n_videos_cvr": summary["n_videos_cvr"],
        "n_pairs": summary["n_pairs"],
        "table": table_row(summary),
        "exact": exact,
        "cvr_breakdown": summary["cvr_breakdown"],
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


_COLUMNS = [
    ("Coverage (%)", "coverage_pct", "{:.1f}"),
    ("Action Cov. (%)", "action_coverage_pct", "{:.1f}"),
    ("Speed-Up", "speed_up", "{:.2f}"),
    ("Coll. Rate (%)", "collision_rate_pct", "{:.1f}"),
    ("Jump (m)", "jump_m", "{:.2f}"),
    ("OCR (%)", "ocr_pct", "{:.2f}"),
    ("CVR (%)", "cvr_pct", "{:.1f}"),
]


def format_table(rows: Iterable[tuple[str, dict]], breakdown: Optional[dict] = None) -> str:
    """Render ``(name, table_row)`` pairs as an aligned text table."""
    rows = list(rows)
    header = ["Method"] + [c[0] for c in _COLUMNS]
    body = [[name] + ["-" if row.get(key) is None else fmt.format(row[key]) for _, key, fmt in _COLUMNS]
            for name, row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    if breakdown:
        lines.append("")
        lines.append("Causal violations   Reverse  Miss  Combined")
        total = 0
        for kind in CAUSAL_KINDS:
            counts = breakdown.get(kind, {"reverse": 0, "miss": 0})
            combined = counts["reverse"] + counts["miss"]
            total += combined
            lines.append(f"{kind:<18}  {counts['reverse']:>7}  {counts['miss']:>4}  {combined:>8}")
        lines.append(f"{'total':<18}  {'':>7}  {'':>4}  {total:>8}")
    return "\n".join(lines) + "\n"

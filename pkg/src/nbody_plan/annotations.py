"""Readers and writers for annotation CSVs and the plan interchange document.

Canonical CSV headers (UTF-8, comma separated, fixed column order)::

    actions.csv  start_frame,stop_frame,narration,verb,noun
    poses.csv    frame,x,y,z,yaw
    tracks.csv   object_id,start_frame,stop_frame
    causal.csv   kind,cause_start,cause_end,effect_start,effect_end

Frame pairs are half-open ``[start, stop)``. Plans are JSON documents, see
:func:`load_plan`.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Assignment, ParallelPlan, PlanError, Segment, Timeline, as_fps

__all__ = [
    "AnnotationError",
    "ActionRecord",
    "PoseSample",
    "Trajectory",
    "ObjectTrackSet",
    "CausalPair",
    "AnnotationSet",
    "CAUSAL_KINDS",
    "load_actions",
    "load_poses",
    "load_object_tracks",
    "load_causal_pairs",
    "load_plan",
    "save_plan",
    "dump_actions",
    "dump_poses",
    "dump_object_tracks",
    "dump_causal_pairs",
    "seconds_to_frames",
    "parse_timestamp",
    "yaw_from_quaternion",
    "convert_actions",
]

ACTION_HEADER = ["start_frame", "stop_frame", "narration", "verb", "noun"]
POSE_HEADER = ["frame", "x", "y", "z", "yaw"]
TRACK_HEADER = ["object_id", "start_frame", "stop_frame"]
CAUSAL_HEADER = ["kind", "cause_start", "cause_end", "effect_start", "effect_end"]
CAUSAL_KINDS = ("prep-step", "step-step")


class AnnotationError(ValueError):
    """Parse or validation failure in an annotation file; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def normalize_token(token: str) -> str:
    return re.sub(r"[\s_]+", "-", token.strip().lower())


@dataclass(frozen=True)
class ActionRecord:
    interval: Segment
    narration: str
    verb: str
    noun: str


@dataclass(frozen=True)
class PoseSample:
    frame: int
    position: tuple[float, float, float]
    yaw: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense per-frame pose lookup; frames without data are marked absent."""

    xyz: np.ndarray
    yaw: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        for name in ("xyz", "yaw", "present"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_samples(cls, samples: Iterable[PoseSample], length: Optional[int] = None) -> "Trajectory":
        samples = list(samples)
        n = max((s.frame for s in samples), default=-1) + 1
        if length is not None:
            if length < n:
                raise ValueError(f"length {length} shorter than last pose frame {n - 1}")
            n = length
        xyz = np.full((n, 3), np.nan)
        yaw = np.full(n, np.nan)
        present = np.zeros(n, dtype=bool)
        for s in samples:
            xyz[s.frame] = s.position
            yaw[s.frame] = s.yaw
            present[s.frame] = True
        return cls(xyz, yaw, present)

    @classmethod
    def from_arrays(cls, xy, yaw=None, z=None) -> "Trajectory":
        """Fully-present trajectory from per-frame XY (and optional yaw / z) arrays."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        n = len(xy)
        xyz = np.zeros((n, 3))
        xyz[:, :2] = xy
        if z is not None:
            xyz[:, 2] = z
        yaw = np.zeros(n) if yaw is None else np.broadcast_to(np.asarray(yaw, dtype=float), (n,)).copy()
        return cls(xyz, yaw, np.ones(n, dtype=bool))

    def __len__(self) -> int:
        return len(self.present)

    @property
    def frames(self) -> np.ndarray:
        return np.flatnonzero(self.present)

    @property
    def xy(self) -> np.ndarray:
        return self.xyz[:, :2]

    def has(self, t: int) -> bool:
        return 0 <= t < len(self.present) and bool(self.present[t])

    def pose(self, t: int) -> Optional[PoseSample]:
        if not self.has(t):
            return None
        x, y, z = (float(v) for v in self.xyz[t])
        return PoseSample(int(t), (x, y, z), float(self.yaw[t]))

    def samples(self) -> list[PoseSample]:
        return [self.pose(int(t)) for t in self.frames]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.present, other.present)
                and np.array_equal(self.xyz[self.present], other.xyz[other.present])
                and np.array_equal(self.yaw[self.present], other.yaw[other.present]))


@dataclass(frozen=True)
class ObjectTrackSet:
    """Object id -> sorted, pairwise disjoint motion intervals."""

    tracks: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def __getitem__(self, object_id: str) -> tuple[Segment, ...]:
        return self.tracks[object_id]

    def items(self):
        return self.tracks.items()

    @property
    def n_intervals(self) -> int:
        return sum(len(v) for v in self.tracks.values())

    def overlapping(self, seg: Segment) -> list[str]:
        return [oid for oid, ivs in self.tracks.items() if any(iv.overlap(seg) for iv in ivs)]

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, Segment]]) -> "ObjectTrackSet":
        grouped: dict[str, list[Segment]] = {}
        for oid, seg in records:
            grouped.setdefault(oid, []).append(seg)
        tracks = {}
        for oid, segs in grouped.items():
            segs.sort()
            for prev, cur in zip(segs, segs[1:]):
                if prev.overlap(cur):
                    raise ValueError(f"object {oid!r}: intervals [{prev.start}, {prev.end}) and "
                                     f"[{cur.start}, {cur.end}) overlap")
            tracks[oid] = tuple(segs)
        return cls(tracks)


@dataclass(frozen=True)
class CausalPair:
    cause: Segment
    effect: Segment
    kind: str

    def __post_init__(self):
        if self.kind not in CAUSAL_KINDS:
            raise ValueError(f"unknown causal kind {self.kind!r}; expected one of {CAUSAL_KINDS}")
        if self.cause.end > self.effect.start:
            raise ValueError(f"cause [{self.cause.start}, {self.cause.end}) does not end before "
                             f"effect [{self.effect.start}, {self.effect.end}) starts")


@dataclass(frozen=True)
class AnnotationSet:
    actions: tuple = ()
    tracks: ObjectTrackSet = field(default_factory=ObjectTrackSet)
    pairs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "pairs", tuple(self.pairs))


# -- CSV plumbing -------------------------------------------------------------

def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", encoding="utf-8", newline=""), True


def _rows(source, header: Sequence[str]):
    """Yield ``(line_number, row)`` after checking the header; skips blank lines."""
    stream, owned = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            first = next(reader)
        except StopIteration:
            raise AnnotationError("empty file, expected header " + ",".join(header), 1)
        if [h.strip().lstrip("﻿") for h in first] != list(header):
            raise AnnotationError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise AnnotationError(f"expected {len(header)} fields, got {len(row)}", reader.line_num)
            yield reader.line_num, [c.strip() for c in row]
    finally:
        if owned:
            stream.close()


def _int(value: str, line: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise AnnotationError(f"{name} is not an integer: {value!r}", line) from None


def _float(value: str, line: int, name: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise AnnotationError(f"{name} is not a number: {value!r}", line) from None
    if not math.isfinite(out):
        raise AnnotationError(f"{name} is not finite: {value!r}", line)
    return out


def _segment(start: int, stop: int, line: int) -> Segment:
    if start < 0:
        raise AnnotationError(f"negative start frame {start}", line)
    if stop <= start:
        raise AnnotationError(f"stop frame {stop} must be greater than start frame {start}", line)
    return Segment(start, stop)


def _write_csv(sink, header, rows):
    stream, owned = (sink, False) if hasattr(sink, "write") else (open(sink, "w", encoding="utf-8", newline=""), True)
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if owned:
            stream.close()


# -- loaders ------------------------------------------------------------------

def load_actions(source) -> list[ActionRecord]:
    out = []
    for line, (start, stop, narration, verb, noun) in _rows(source, ACTION_HEADER):
        seg = _segment(_int(start, line, "start_frame"), _int(stop, line, "stop_frame"), line)
        verb, noun = normalize_token(verb), normalize_token(noun)
        if not verb or not noun:
            raise AnnotationError("verb and noun must be non-empty", line)
        out.append(ActionRecord(seg, narration, verb, noun))
    return out


def load_poses(source, length: Optional[int] = None) -> Trajectory:
    samples = []
    last = -1
    for line, (frame, x, y, z, yaw) in _rows(source, POSE_HEADER):
        t = _int(frame, line, "frame")
        if t < 0:
            raise AnnotationError(f"negative frame {t}", line)
        if t == last:
            raise AnnotationError(f"duplicate frame {t}", line)
        if t < last:
            raise AnnotationError(f"frame {t} out of order (previous {last})", line)
        last = t
        pos = (_float(x, line, "x"), _float(y, line, "y"), _float(z, line, "z"))
        samples.append(PoseSample(t, pos, _float(yaw, line, "yaw")))
    return Trajectory.from_samples(samples, length)


def load_object_tracks(source) -> ObjectTrackSet:
    records = []
    for line, (oid, start, stop) in _rows(source, TRACK_HEADER):
        if not oid:
            raise AnnotationError("empty object_id", line)
        records.append((oid, _segment(_int(start, line, "start_frame"), _int(stop, line, "stop_frame"), line), line))
    # check per-object overlap here so the error can cite the offending row
    by_id: dict[str, list[tuple[Segment, int]]] = {}
    for oid, seg, line in records:
        by_id.setdefault(oid, []).append((seg, line))
    for oid, segs in by_id.items():
        segs.sort(key=lambda p: p[0])
        for (a, _), (b, lb) in zip(segs, segs[1:]):
            if a.overlap(b):
                raise AnnotationError(f"object {oid!r}: [{b.start}, {b.end}) overlaps [{a.start}, {a.end})", lb)
    return ObjectTrackSet.from_records((oid, seg) for oid, seg, _ in records)


def load_causal_pairs(source) -> list[CausalPair]:
    out = []
    for line, (kind, cs, ce, es, ee) in _rows(source, CAUSAL_HEADER):
        kind = normalize_token(kind)
        if kind not in CAUSAL_KINDS:
            raise AnnotationError(f"unknown kind {kind!r}; expected one of {', '.join(CAUSAL_KINDS)}", line)
        cause = _segment(_int(cs, line, "cause_start"), _int(ce, line, "cause_end"), line)
        effect = _segment(_int(es, line, "effect_start"), _int(ee, line, "effect_end"), line)
        if cause.end > effect.start:
            raise AnnotationError(f"cause ends at {cause.end} after effect starts at {effect.start}", line)
        out.append(CausalPair(cause, effect, kind))
    return out


# -- writers ------------------------------------------------------------------

def _num(v: float) -> str:
    return repr(float(v))


def dump_actions(actions: Iterable[ActionRecord], sink) -> None:
    _write_csv(sink, ACTION_HEADER,
               ([a.interval.start, a.interval.end, a.narration, a.verb, a.noun] for a in actions))


def dump_poses(traj: Trajectory, sink) -> None:
    _write_csv(sink, POSE_HEADER,
               ([int(t), *(_num(v) for v in traj.xyz[t]), _num(traj.yaw[t])] for t in traj.frames))


def dump_object_tracks(tracks: ObjectTrackSet, sink) -> None:
    _write_csv(sink, TRACK_HEADER,
               ([oid, seg.start, seg.end] for oid, segs in tracks.items() for seg in segs))


def dump_causal_pairs(pairs: Iterable[CausalPair], sink) -> None:
    _write_csv(sink, CAUSAL_HEADER,
               ([p.kind, p.cause.start, p.cause.end, p.effect.start, p.effect.end] for p in pairs))


# -- plan document ------------------------------------------------------------

def _fps_to_json(fps: Fraction):
    # non-integer rates keep exactness as "num/den" strings
    return fps.numerator if fps.denominator == 1 else str(fps)


def load_plan(source, timeline: Optional[Timeline] = None) -> ParallelPlan:
    """Read a plan document.

    JSON object with ``video_id``, ``fps``, ``n_agents`` and ``assignments``
    (list of ``{agent, source_start, source_end, plan_start}``). Optional
    ``length_frames`` gives the source timeline length; otherwise
    ``timeline`` must be passed, or the length falls back to the largest
    ``source_end``. ``"units": "seconds"`` makes the three time fields
    seconds, rounded half-up to frames at ``fps``.

    Structurally invalid plans still load; inspect ``plan.violations``.
    """
    stream, owned = _open_text(source)
    try:
        text = stream.read()
    finally:
        if owned:
            stream.close()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed plan document: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict):
        raise AnnotationError("plan document must be a JSON object")
    for key in ("n_agents", "assignments"):
        if key not in doc:
            raise AnnotationError(f"plan document missing {key!r}")
    try:
        fps = as_fps(doc.get("fps", timeline.fps if timeline else 1))
    except (ValueError, TypeError, ZeroDivisionError):
        raise AnnotationError(f"invalid fps {doc.get('fps')!r}") from None
    n_agents = doc["n_agents"]
    if not isinstance(n_agents, int) or isinstance(n_agents, bool) or n_agents < 1:
        raise AnnotationError(f"n_agents must be a positive integer, got {n_agents!r}")
    units = doc.get("units", "frames")
    if units not in ("frames", "seconds"):
        raise AnnotationError(f"units must be 'frames' or 'seconds', got {units!r}")

    def as_frame(value, where):
        if units == "seconds":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise AnnotationError(f"{where}: expected a number, got {value!r}")
            return seconds_to_frames(value, fps)
        if not isinstance(value, int) or isinstance(value, bool):
            raise AnnotationError(f"{where}: expected an integer frame, got {value!r}")
        return value

    rows = []
    if not isinstance(doc["assignments"], list):
        raise AnnotationError("assignments must be a list")
    for k, item in enumerate(doc["assignments"]):
        where = f"assignments[{k}]"
        if not isinstance(item, dict):
            raise AnnotationError(f"{where}: expected an object")
        try:
            agent, s, e, tau = item["agent"], item["source_start"], item["source_end"], item["plan_start"]
        except KeyError as exc:
            raise AnnotationError(f"{where}: missing field {exc.args[0]!r}") from None
        if not isinstance(agent, int) or isinstance(agent, bool) or not 1 <= agent <= n_agents:
            raise AnnotationError(f"{where}: agent {agent!r} outside [1, {n_agents}]")
        s, e, tau = as_frame(s, where), as_frame(e, where), as_frame(tau, where)
        if s < 0 or e <= s:
            raise AnnotationError(f"{where}: invalid source interval [{s}, {e})")
        rows.append((s, e, agent, tau))

    length = doc.get("length_frames")
    if length is not None:
        if not isinstance(length, int) or isinstance(length, bool) or length < 1:
            raise AnnotationError(f"length_frames must be a positive integer, got {length!r}")
        if timeline is not None and timeline.length_frames != length:
            raise AnnotationError(f"length_frames {length} disagrees with timeline of {timeline.length_frames}")
        tl = Timeline(length, fps)
    elif timeline is not None:
        tl = Timeline(timeline.length_frames, fps)
    else:
        tl = Timeline(max((r[1] for r in rows), default=1), fps)
    plan = ParallelPlan.from_tuples(tl, n_agents, rows, video_id=doc.get("video_id"))
    plan.violations  # computed eagerly so callers see the report attached
    return plan


def plan_to_dict(plan: ParallelPlan) -> dict:
    return {
        "video_id": plan.video_id,
        "fps": _fps_to_json(plan.timeline.fps),
        "length_frames": plan.timeline.length_frames,
        "n_agents": plan.n_agents,
        "assignments": [
            {"agent": a.agent, "source_start": a.segment.start,
             "source_end": a.segment.end, "plan_start": a.plan_start}
            for a in plan.assignments
        ],
    }


def save_plan(plan: ParallelPlan, sink) -> None:
    if plan.violations:
        raise PlanError("refusing to save an invalid plan", plan.violations)
    text = json.dumps(plan_to_dict(plan), indent=2) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)


# -- dataset adapters -----------------------------------------------------------

def seconds_to_frames(seconds, fps) -> int:
    """Round half-up to the nearest frame index."""
    if isinstance(seconds, float):
        seconds = Fraction(repr(seconds))
    value = Fraction(seconds) * as_fps(fps)
    return math.floor(value + Fraction(1, 2))


def parse_timestamp(text: str) -> Fraction:
    """Seconds from ``HH:MM:SS.fff`` / ``MM:SS.fff`` / plain seconds."""
    parts = text.strip().split(":")
    if not 1 <= len(parts) <= 3:
        raise ValueError(f"unrecognised timestamp {text!r}")
    total = Fraction(0)
    for p in parts:
        total = total * 60 + Fraction(p)
    return total


def yaw_from_quaternion(qw: float, qx: float, qy: float, qz: float,
                        forward: Sequence[float] = (0.0, 0.0, 1.0)) -> float:
    """Heading in the world XY plane of the camera's ``forward`` axis.

    ``forward`` defaults to the camera-frame optical axis (+z, as in COLMAP
    and most SLAM exports); the quaternion rotates camera into world.
    """
    q = np.array([qw, qx, qy, qz], dtype=float)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    f = rot @ np.asarray(forward, dtype=float)
    return float(math.atan2(f[1], f[0]))


def convert_actions(source, fps, start_col="start_timestamp", stop_col="stop_timestamp",
                    narration_col="narration", verb_col="verb", noun_col="noun") -> list[ActionRecord]:
    """Adapt a dataset-native action CSV with timestamp columns to canonical records."""
    stream, owned = _open_text(source)
    try:
        reader = csv.DictReader(stream)
        out = []
        for row in reader:
            line = reader.line_num
            try:
                start = seconds_to_frames(parse_timestamp(row[start_col]), fps)
                stop = seconds_to_frames(parse_timestamp(row[stop_col]), fps)
            except KeyError as exc:
                raise AnnotationError(f"missing column {exc.args[0]!r}", line) from None
            except (ValueError, ZeroDivisionError):
                raise AnnotationError(f"bad timestamp in {row.get(start_col)!r}/{row.get(stop_col)!r}", line) from None
            # sub-frame actions still occupy one frame
            stop = max(stop, start + 1)
            out.append(ActionRecord(_segment(start, stop, line), row.get(narration_col, ""),
                                    normalize_token(row.get(verb_col, "") or "?"),
                                    normalize_token(row.get(noun_col, "") or "?")))
        return out
    finally:
        if owned:
            stream.close()


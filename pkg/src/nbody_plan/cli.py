"""Command-line entry point.

Each video lives in its own directory with fixed file names::

    <video>/video.json    optional: {"video_id": ..., "fps": ..., "length_frames": ...}
    <video>/actions.csv
    <video>/poses.csv
    <video>/tracks.csv    optional (no object-conflict ground truth without it)
    <video>/causal.csv    optional (no causal pairs without it)

Exit codes: 0 success, 1 input or I/O error, 2 invalid plan.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .annotations import (AnnotationError, AnnotationSet, ObjectTrackSet, Trajectory, load_actions,
                          load_causal_pairs, load_object_tracks, load_plan, load_poses, save_plan,
                          seconds_to_frames)
from .core import ParallelPlan, PlanError, Timeline, as_fps, plan_makespan

EXIT_OK, EXIT_INPUT, EXIT_INVALID_PLAN = 0, 1, 2


class InputError(Exception):
    pass


@dataclass
class Video:
    video_id: str
    timeline: Timeline
    annotations: AnnotationSet
    trajectory: Optional[Trajectory]


def _read(path: Path, loader, **kw):
    try:
        return loader(path, **kw)
    except AnnotationError as exc:
        raise InputError(f"{path}: {exc}") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None


def load_video(directory, need=("actions", "poses"), length: Optional[int] = None, fps=None) -> Video:
    """Load and check every annotation file of one video directory before any computation."""
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"{root}: not a directory")
    meta = {}
    meta_path = root / "video.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{meta_path}: {exc}") from None
    for name in need:
        path = root / f"{name}.csv"
        if not path.exists():
            raise InputError(f"{path}: required file is missing")

    def optional(name, loader, default):
        path = root / f"{name}.csv"
        return _read(path, loader) if path.exists() else default

    actions = optional("actions", load_actions, [])
    tracks = optional("tracks", load_object_tracks, ObjectTrackSet())
    pairs = optional("causal", load_causal_pairs, [])
    traj = optional("poses", load_poses, None)

    meta_length = meta.get("length_frames")
    if meta_length is not None and length is not None and meta_length != length:
        raise InputError(f"{meta_path}: length_frames {meta_length} disagrees with plan ({length})")
    T = meta_length or length
    if T is None:
        candidates = [a.interval.end for a in actions]
        if traj is not None:
            candidates.append(len(traj))
        T = max(candidates, default=0)
    if T < 1:
        raise InputError(f"{root}: cannot determine the video length")
    try:
        timeline = Timeline(T, as_fps(meta.get("fps", fps if fps is not None else 1)))
    except (ValueError, TypeError) as exc:
        raise InputError(f"{meta_path}: {exc}") from None
    return Video(meta.get("video_id", root.name), timeline, AnnotationSet(actions, tracks, pairs), traj)


def _write(out: Optional[str], text: str) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _violation_text(violations) -> str:
    lines = [f"{len(violations)} violation(s)"]
    lines += [f"  [{v.kind}] assignments {list(v.assignments)}: {v.message}" for v in violations]
    return "\n".join(lines) + "\n"


def _evaluate_one(plan_path: Path, ann: Path, variant: str):
    from . import metrics

    plan = _read(plan_path, load_plan)
    video = load_video(ann, need=("actions", "poses"), length=plan.timeline.length_frames, fps=plan.timeline.fps)
    if plan.violations:
        raise PlanError(f"{plan_path}: invalid plan", plan.violations)
    if plan.video_id is None:
        plan = ParallelPlan(plan.n_agents, plan.assignments, plan.timeline, video.video_id)
    return plan, metrics.evaluate_all(plan, video.annotations, video.trajectory, action_variant=variant)


def cmd_evaluate(args) -> int:
    from . import metrics

    if not args.plan or not args.ann:
        raise InputError("evaluate needs --plan and --ann")
    try:
        plan, report = _evaluate_one(Path(args.plan), Path(args.ann), args.metric_variant)
    except PlanError as exc:
        sys.stderr.write(f"{exc}\n{_violation_text(exc.violations)}")
        return EXIT_INVALID_PLAN
    if args.table:
        text = metrics.format_table([(report.video_id or "plan", metrics.table_row(report))], report.cvr_breakdown)
    else:
        text = metrics.dumps(metrics.report_to_dict(report))
    _write(args.out, text)
    return EXIT_OK


def cmd_schedule(args) -> int:
    from . import schedulers
    from .metrics import frame_coverage

    if not args.ann:
        raise InputError("schedule needs --ann")
    if args.method not in ("naive", "heft-gt", "heft-window"):
        raise InputError(f"unknown method {args.method!r}; choose naive, heft-gt or heft-window")
    need = () if args.method == "naive" else ("actions",)
    video = load_video(args.ann, need=need)
    rules = None
    if args.rules:
        try:
            rules = schedulers.PrecedenceRules.load(args.rules)
        except OSError as exc:
            raise InputError(f"{args.rules}: {exc.strerror or exc}") from None
        except schedulers.RulesError as exc:
            raise InputError(f"{args.rules}: {exc}") from None
    if args.method == "naive":
        plan = schedulers.naive_split(video.timeline, args.n)
    elif args.method == "heft-gt":
        plan = schedulers.heft_gt(video.annotations, args.n, rules, video.timeline)
    else:
        window = seconds_to_frames(args.window, video.timeline.fps)
        plan = schedulers.heft_window(video.annotations, video.timeline, args.n, window, rules)
    plan = ParallelPlan(plan.n_agents, plan.assignments, plan.timeline, video.video_id)

    buf = io.StringIO()
    save_plan(plan, buf)
    _write(args.out, buf.getvalue())
    info = sys.stderr if args.out in (None, "-") else sys.stdout
    info.write(f"makespan={plan_makespan(plan)} frames  frame_coverage={float(frame_coverage(plan)):.4f}\n")
    return EXIT_OK


def cmd_zones(args) -> int:
    from .prompts import spatial_csv
    from .zones import gmm_zones, grid_zones

    if not args.ann:
        raise InputError("zones needs --ann")
    video = load_video(args.ann, need=("poses",))
    try:
        if args.gmm is not None:
            zones = gmm_zones(video.trajectory, args.gmm, seed=args.seed)
        else:
            zones = grid_zones(video.trajectory, args.size)
    except ValueError as exc:
        raise InputError(f"{args.ann}: {exc}") from None
    _write(args.out, spatial_csv(zones, video.timeline.fps))
    return EXIT_OK


def cmd_prompt(args) -> int:
    from .geometry import ZoneOccupancy
    from .prompts import TIERS, PromptTier, load_zone_csv, metadata_json, render_prompt

    if args.tier not in TIERS:
        raise InputError(f"unknown tier {args.tier!r}; choose from {', '.join(TIERS)}")
    fps = load_video(args.ann, need=()).timeline.fps if args.ann else as_fps(1)
    zones = None
    if args.zones:
        try:
            zones = ZoneOccupancy(load_zone_csv(Path(args.zones).read_text(encoding="utf-8"), fps))
        except OSError as exc:
            raise InputError(f"{args.zones}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise InputError(f"{args.zones}: {exc}") from None
    if args.tier == "spatial" and zones is None:
        raise InputError("the spatial tier needs --zones")
    tier = PromptTier(args.tier, args.n, fps, zones)
    _write(args.out, render_prompt(tier))
    if args.out not in (None, "-"):
        Path(str(args.out) + ".meta.json").write_text(metadata_json(tier), encoding="utf-8")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    from . import metrics

    reports = []
    for path in args.reports:
        try:
            reports.append(metrics.report_from_dict(json.loads(Path(path).read_text(encoding="utf-8"))))
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror or exc}") from None
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise InputError(f"{path}: not a metric report ({exc})") from None
    if args.ann:
        # manifest mode: <ann>/videos.txt lists ids; plans are <plan>/<id>.json
        if not args.plan:
            raise InputError("aggregate over a manifest needs --plan (directory of <video_id>.json plans)")
        manifest = Path(args.ann) / "videos.txt"
        try:
            ids = [ln.strip() for ln in manifest.read_text(encoding="utf-8").splitlines()
                   if ln.strip() and not ln.startswith("#")]
        except OSError as exc:
            raise InputError(f"{manifest}: {exc.strerror or exc}") from None
        for vid in ids:
            try:
                _, report = _evaluate_one(Path(args.plan) / f"{vid}.json", Path(args.ann) / vid, args.metric_variant)
            except PlanError as exc:
                sys.stderr.write(f"{exc}\n")
                return EXIT_INVALID_PLAN
            reports.append(report)
    if not reports:
        raise InputError("aggregate needs report files or --ann with a manifest")
    summary = metrics.aggregate(reports)
    if args.table:
        text = metrics.format_table([(f"mean over {summary['n_videos']} videos", metrics.table_row(summary))],
                                    summary["cvr_breakdown"])
    else:
        text = metrics.dumps(metrics.summary_to_dict(summary))
    _write(args.out, text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbody-plan", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score a plan against a video's annotations")
    p.add_argument("--plan", required=True)
    p.add_argument("--ann", required=True, help="video annotation directory")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--table", action="store_true", help="human-readable table instead of JSON")
    p.add_argument("--metric-variant", default="fraction", choices=["fraction", "segment-iou"],
                   help="action-coverage rule")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("schedule", help="generate a baseline plan")
    p.add_argument("--method", required=True, help="naive, heft-gt or heft-window")
    p.add_argument("--ann", required=True)
    p.add_argument("--n", type=int, default=2, help="number of agents")
    p.add_argument("--window", type=float, default=60.0, help="window length in seconds (heft-window)")
    p.add_argument("--rules", help="precedence rules file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("zones", help="write the zone-occupancy CSV")
    p.add_argument("--ann", required=True)
    p.add_argument("--size", type=float, default=1.2, help="grid cell size in metres")
    p.add_argument("--gmm", type=int, help="use a Gaussian mixture with this many components")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_zones)

    p = sub.add_parser("prompt", help="render a prompt tier")
    p.add_argument("--tier", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--zones", help="zone CSV (required for the spatial tier)")
    p.add_argument("--ann", help="video directory, used for its fps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("aggregate", help="average metric reports over videos")
    p.add_argument("reports", nargs="*", help="report JSON files")
    p.add_argument("--ann", help="root with videos.txt manifest and one directory per video")
    p.add_argument("--plan", help="directory of <video_id>.json plans (manifest mode)")
    p.add_argument("--out")
    p.add_argument("--table", action="store_true")
    p.add_argument("--metric-variant", default="fraction", choices=["fraction", "segment-iou"])
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except PlanError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID_PLAN


if __name__ == "__main__":
    sys.exit(main())

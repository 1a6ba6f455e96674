"""Baseline plan generators: naive equal split and a greedy list scheduler.

The list scheduler takes tasks (ground-truth actions or fixed windows),
precedences induced from verb-noun cues, and places each ready task at
its earliest feasible plan time under agent availability and exclusive
object use.
"""
from __future__ import annotations

import graphlib
import heapq
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from sklearn.base import BaseEstimator

from .annotations import ActionRecord, AnnotationSet, ObjectTrackSet, seconds_to_frames
from .core import Assignment, ParallelPlan, Segment, Timeline

__all__ = [
    "Task",
    "PrecedenceGraph",
    "PrecedenceRules",
    "RulesError",
    "default_rules",
    "naive_split",
    "induce_precedences",
    "tasks_from_gt",
    "tasks_from_windows",
    "list_schedule",
    "heft_gt",
    "heft_window",
    "NaiveSplitScheduler",
    "ListScheduler",
]

WILDCARD = "*"


class RulesError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    interval: Segment
    objects: frozenset = frozenset()
    label: str = ""
    # (verb, noun, source start) for every action the task carries
    cues: tuple = ()

    @property
    def duration(self) -> int:
        return self.interval.length


@dataclass(frozen=True)
class PrecedenceGraph:
    n_nodes: int
    edges: tuple = ()

    def __post_init__(self):
        edges = tuple(sorted(set((int(u), int(v)) for u, v in self.edges)))
        for u, v in edges:
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes) or u == v:
                raise ValueError(f"bad edge ({u}, {v}) for {self.n_nodes} nodes")
        object.__setattr__(self, "edges", edges)
        try:
            tuple(self._sorter().static_order())
        except graphlib.CycleError as exc:
            raise ValueError(f"precedence graph has a cycle: {exc.args[1]}") from None

    def _sorter(self):
        ts = graphlib.TopologicalSorter({i: () for i in range(self.n_nodes)})
        for u, v in self.edges:
            ts.add(v, u)
        return ts

    def predecessors(self) -> list[list[int]]:
        preds = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            preds[v].append(u)
        return preds

    def successors(self) -> list[list[int]]:
        succ = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            succ[u].append(v)
        return succ

    def critical_path(self, durations: Sequence[int]) -> int:
        """Longest duration-weighted path."""
        finish = [0] * self.n_nodes
        preds = self.predecessors()
        for v in self._sorter().static_order():
            finish[v] = durations[v] + max((finish[u] for u in preds[v]), default=0)
        return max(finish, default=0)


@dataclass(frozen=True)
class PrecedenceRules:
    """Verb classes and the ordered class chains applied per noun."""

    classes: dict = field(default_factory=dict)
    chains: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(tuple(c) for c in self.chains))
        graph = graphlib.TopologicalSorter()
        for chain in self.chains:
            if len(chain) < 2:
                raise RulesError(f"chain {' -> '.join(chain)!r} needs at least two classes")
            if len(set(chain)) != len(chain):
                raise RulesError(f"chain {' -> '.join(chain)!r} is cyclic")
            seen: dict[str, str] = {}
            wildcards = 0
            for name in chain:
                if name not in self.classes:
                    raise RulesError(f"chain uses undefined class {name!r}")
                members = self.classes[name]
                if WILDCARD in members:
                    wildcards += 1
                for verb in members - {WILDCARD}:
                    if verb in seen:
                        raise RulesError(f"verb {verb!r} is in both {seen[verb]!r} and {name!r} of one chain")
                    seen[verb] = name
            if wildcards > 1:
                raise RulesError(f"chain {' -> '.join(chain)!r} has more than one wildcard class")
            for a, b in zip(chain, chain[1:]):
                graph.add(b, a)
        try:
            graph.prepare()
        except graphlib.CycleError as exc:
            raise RulesError(f"chains form a cycle: {' -> '.join(exc.args[1])}") from None

    @classmethod
    def parse(cls, text: str) -> "PrecedenceRules":
        classes: dict[str, frozenset] = {}
        chains = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" in line:
                chains.append(tuple(p.strip() for p in line.split("->")))
            elif "=" in line:
                name, members = line.split("=", 1)
                name = name.strip()
                if not re.fullmatch(r"[\w-]+", name):
                    raise RulesError(f"line {lineno}: bad class name {name!r}")
                if name in classes:
                    raise RulesError(f"line {lineno}: class {name!r} defined twice")
                verbs = frozenset(re.sub(r"[\s_]+", "-", v.strip().lower()) for v in members.split(",") if v.strip())
                if not verbs:
                    raise RulesError(f"line {lineno}: class {name!r} has no verbs")
                classes[name] = verbs
            else:
                raise RulesError(f"line {lineno}: expected '<class> = verbs' or '<class> -> <class>'")
        return cls(classes, tuple(chains))

    @classmethod
    def load(cls, path) -> "PrecedenceRules":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def class_index(self, chain: tuple, verb: str) -> Optional[int]:
        wildcard = None
        for i, name in enumerate(chain):
            members = self.classes[name]
            if verb in members:
                return i
            if WILDCARD in members:
                wildcard = i
        return wildcard


def default_rules() -> PrecedenceRules:
    text = resources.files("nbody_plan").joinpath("data/default_rules.txt").read_text(encoding="utf-8")
    return PrecedenceRules.parse(text)


def naive_split(timeline: Timeline, n_agents: int) -> ParallelPlan:
    """Cut the timeline into ``n_agents`` contiguous chunks, all starting at plan frame 0."""
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    base, extra = divmod(timeline.length_frames, n_agents)
    assignments = []
    start = 0
    for k in range(n_agents):
        size = base + (1 if k < extra else 0)
        if size:
            assignments.append(Assignment(Segment(start, start + size), k + 1, 0))
        start += size
    return ParallelPlan(n_agents, tuple(assignments), timeline)


def induce_precedences(tasks: Sequence[Task], rules: Optional[PrecedenceRules] = None) -> PrecedenceGraph:
    """Link tasks on the same noun along each rule chain.

    Every cue gets an edge to the nearest later cue (in source time, on
    another task) whose verb sits in a later class of the chain. Edges only
    point forward in source time, so the graph is acyclic.
    """
    rules = rules or default_rules()
    order = {i: (t.interval.start, i) for i, t in enumerate(tasks)}
    by_noun: dict[str, list[tuple[int, int, str]]] = {}
    for i, task in enumerate(tasks):
        for verb, noun, start in task.cues:
            by_noun.setdefault(noun, []).append((start, i, verb))
    edges = set()
    for chain in rules.chains:
        for noun in sorted(by_noun):
            cues = [(start, i, rules.class_index(chain, verb))
                    for start, i, verb in sorted(by_noun[noun])]
            cues = [c for c in cues if c[2] is not None]
            for p, (start, i, cls_i) in enumerate(cues):
                for start_j, j, cls_j in cues[p + 1:]:
                    if j != i and cls_j > cls_i and start_j > start:
                        if order[i] < order[j]:
                            edges.add((i, j))
                        break
    return PrecedenceGraph(len(tasks), tuple(edges))


def tasks_from_gt(actions: Sequence[ActionRecord], tracks: Optional[ObjectTrackSet] = None) -> list[Task]:
    """One task per action, objects taken from overlapping tracks (noun as fallback).

    Actions are taken in source order; where an action overlaps ones
    already taken, its overlapped prefix is trimmed, and an action wholly
    inside earlier ones yields no task. This keeps task intervals disjoint.
    """
    tracks = tracks or ObjectTrackSet()
    out = []
    cursor = 0
    for act in sorted(actions, key=lambda a: (a.interval.start, a.interval.end)):
        start = max(act.interval.start, cursor)
        if start >= act.interval.end:
            continue
        seg = Segment(start, act.interval.end)
        cursor = seg.end
        objects = frozenset(tracks.overlapping(seg)) or frozenset([act.noun])
        out.append(Task(seg, objects, act.narration, ((act.verb, act.noun, act.interval.start),)))
    return out


def tasks_from_windows(actions: Sequence[ActionRecord], timeline: Timeline, window_frames: Optional[int] = None) -> list[Task]:
    """Fixed windows over the whole timeline; objects are the nouns of actions starting inside."""
    if window_frames is None:
        window_frames = seconds_to_frames(60, timeline.fps)
    if window_frames < 1:
        raise ValueError(f"window_frames must be >= 1, got {window_frames}")
    T = timeline.length_frames
    buckets: list[list[ActionRecord]] = [[] for _ in range(-(-T // window_frames))]
    for act in sorted(actions, key=lambda a: (a.interval.start, a.interval.end)):
        if act.interval.start < T:
            buckets[act.interval.start // window_frames].append(act)
    out = []
    for k, acts in enumerate(buckets):
        seg = Segment(k * window_frames, min((k + 1) * window_frames, T))
        out.append(Task(seg, frozenset(a.noun for a in acts), "; ".join(a.narration for a in acts),
                        tuple((a.verb, a.noun, a.interval.start) for a in acts)))
    return out


class _Busy:
    """Sorted disjoint half-open intervals."""

    def __init__(self):
        self.starts: list[int] = []
        self.ends: list[int] = []

    def free(self, t: int, d: int) -> bool:
        i = bisect_right(self.starts, t)
        if i and self.ends[i - 1] > t:
            return False
        return i == len(self.starts) or self.starts[i] >= t + d

    def add(self, s: int, e: int) -> None:
        i = bisect_left(self.starts, s)
        self.starts.insert(i, s)
        self.ends.insert(i, e)


def list_schedule(tasks: Sequence[Task], graph: PrecedenceGraph, n_agents: int,
                  timeline: Optional[Timeline] = None) -> ParallelPlan:
    """Greedy list scheduling with idle insertion.

    Ready tasks (all predecessors placed) are taken by earliest source
    start, then index. Each goes to the earliest plan time no earlier than
    its predecessors' finish at which an agent is free for its whole
    duration and none of its objects is held by an overlapping task; ties
    go to the lowest agent index.
    """
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    if graph.n_nodes != len(tasks):
        raise ValueError(f"graph has {graph.n_nodes} nodes for {len(tasks)} tasks")
    if timeline is None:
        timeline = Timeline(max((t.interval.end for t in tasks), default=1))
    preds, succ = graph.predecessors(), graph.successors()
    waiting = [len(p) for p in preds]
    ready = [(t.interval.start, i) for i, t in enumerate(tasks) if not waiting[i]]
    heapq.heapify(ready)

    agents = [_Busy() for _ in range(n_agents)]
    objects: dict[str, _Busy] = {}
    ends: list[int] = []  # sorted finish times of placed tasks
    start_of: dict[int, tuple[int, int]] = {}

    while ready:
        _, i = heapq.heappop(ready)
        task = tasks[i]
        d = task.duration
        earliest = max((start_of[u][0] + tasks[u].duration for u in preds[i]), default=0)
        candidates = [earliest] + ends[bisect_right(ends, earliest):]
        for t in candidates:
            if not all(objects[o].free(t, d) for o in task.objects if o in objects):
                continue
            agent = next((k for k, busy in enumerate(agents) if busy.free(t, d)), None)
            if agent is not None:
                break
        else:
            raise RuntimeError(f"no feasible slot for task {i}; scheduler state is inconsistent")
        agents[agent].add(t, t + d)
        for o in task.objects:
            objects.setdefault(o, _Busy()).add(t, t + d)
        ends.insert(bisect_right(ends, t + d), t + d)
        start_of[i] = (t, agent + 1)
        for v in succ[i]:
            waiting[v] -= 1
            if not waiting[v]:
                heapq.heappush(ready, (tasks[v].interval.start, v))

    if len(start_of) != len(tasks):
        raise RuntimeError("not every task was scheduled")
    plan = ParallelPlan(n_agents, tuple(Assignment(task.interval, start_of[i][1], start_of[i][0])
                                        for i, task in enumerate(tasks)), timeline)
    if plan.violations:
        raise RuntimeError(f"scheduler produced an invalid plan: {plan.violations[0].message}")
    return plan


def _timeline_for(annotations: AnnotationSet, timeline: Optional[Timeline]) -> Timeline:
    if timeline is not None:
        return timeline
    return Timeline(max((a.interval.end for a in annotations.actions), default=1))


def heft_gt(annotations: AnnotationSet, n_agents: int, rules: Optional[PrecedenceRules] = None,
            timeline: Optional[Timeline] = None) -> ParallelPlan:
    tasks = tasks_from_gt(annotations.actions, annotations.tracks)
    return list_schedule(tasks, induce_precedences(tasks, rules), n_agents, _timeline_for(annotations, timeline))


def heft_window(annotations: AnnotationSet, timeline: Timeline, n_agents: int,
                window: Optional[int] = None, rules: Optional[PrecedenceRules] = None) -> ParallelPlan:
    tasks = tasks_from_windows(annotations.actions, timeline, window)
    return list_schedule(tasks, induce_precedences(tasks, rules), n_agents, timeline)


class NaiveSplitScheduler(BaseEstimator):
    """Estimator wrapper around :func:`naive_split`."""

    def __init__(self, n_agents: int = 2):
        self.n_agents = n_agents

    def fit(self, annotations: Optional[AnnotationSet], timeline: Timeline):
        self.plan_ = naive_split(timeline, self.n_agents)
        return self

    def predict(self, annotations: Optional[AnnotationSet], timeline: Timeline) -> ParallelPlan:
        return self.fit(annotations, timeline).plan_


class ListScheduler(BaseEstimator):
    """List scheduler over ground-truth action tasks or fixed windows.

    ``task_source`` is ``"gt"`` or ``"window"``; ``window_s`` is the window
    length in seconds. After ``fit``: ``tasks_``, ``graph_``, ``plan_``.
    """

    def __init__(self, n_agents: int = 2, task_source: str = "gt", window_s: float = 60,
                 rules: Optional[PrecedenceRules] = None):
        self.n_agents = n_agents
        self.task_source = task_source
        self.window_s = window_s
        self.rules = rules

    def fit(self, annotations: AnnotationSet, timeline: Optional[Timeline] = None):
        if self.task_source == "gt":
            self.tasks_ = tasks_from_gt(annotations.actions, annotations.tracks)
        elif self.task_source == "window":
            if timeline is None:
                raise ValueError("window tasks need the timeline")
            self.tasks_ = tasks_from_windows(annotations.actions, timeline,
                                             seconds_to_frames(self.window_s, timeline.fps))
        else:
            raise ValueError(f"task_source must be 'gt' or 'window', got {self.task_source!r}")
        self.graph_ = induce_precedences(self.tasks_, self.rules)
        self.plan_ = list_schedule(self.tasks_, self.graph_, self.n_agents, _timeline_for(annotations, timeline))
        return self

    def predict(self, annotations: AnnotationSet, timeline: Optional[Timeline] = None) -> ParallelPlan:
        return self.fit(annotations, timeline).plan_

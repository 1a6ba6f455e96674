import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_plan
from synth import random_plan

from nbody_plan.core import (PlanError, Segment, Timeline, assigned_mask, map_source_to_plan, plan_makespan,
                             validate_plan)


def test_timeline_rejects_bad_values():
    with pytest.raises(ValueError):
        Timeline(0)
    with pytest.raises(ValueError):
        Timeline(10, 0)
    assert Timeline(10, "30000/1001").fps.denominator == 1001


def test_segment_invariants():
    with pytest.raises(ValueError):
        Segment(5, 5)
    with pytest.raises(ValueError):
        Segment(-1, 3)
    assert Segment(2, 7).length == 5
    assert Segment(0, 10).iou(Segment(5, 15)) == pytest.approx(5 / 15)


class TestValidatePlan:
    def test_fix_a_and_b_are_valid(self, fix_a, fix_b):
        assert validate_plan(fix_a) == []
        assert validate_plan(fix_b) == []

    def test_same_agent_same_plan_frames(self):
        report = validate_plan(make_plan([(0, 50, 1, 0), (50, 100, 1, 0)]))
        assert [v.kind for v in report] == ["agent_overlap"]
        assert report[0].assignments == (0, 1)

    def test_source_overlap(self):
        report = validate_plan(make_plan([(0, 60, 1, 0), (50, 100, 2, 0)]))
        assert [v.kind for v in report] == ["source_overlap"]

    def test_duplicate_segment_is_single_ownership(self):
        report = validate_plan(make_plan([(0, 50, 1, 0), (0, 50, 2, 0)]))
        assert [v.kind for v in report] == ["single_ownership"]

    def test_out_of_range(self):
        plan = make_plan([(0, 120, 3, -1)], T=100)
        assert {v.kind for v in validate_plan(plan)} == {"segment_bounds", "agent_range", "plan_start"}

    def test_idle_gaps_allowed(self):
        assert validate_plan(make_plan([(0, 10, 1, 0), (20, 30, 1, 15)])) == []

    def test_reports_every_overlap(self):
        plan = make_plan([(0, 30, 1, 0), (10, 40, 2, 0), (20, 50, 2, 100)])
        pairs = sorted(v.assignments for v in validate_plan(plan) if v.kind == "source_overlap")
        assert pairs == [(0, 1), (0, 2), (1, 2)]


class TestMakespan:
    def test_examples(self, fix_a, fix_b):
        assert plan_makespan(fix_a) == 50
        assert plan_makespan(fix_b) == 100
        assert plan_makespan(make_plan([(0, 50, 1, 0), (50, 100, 2, 25)])) == 75
        assert plan_makespan(make_plan([])) == 0

    def test_invalid_plan_rejected(self):
        with pytest.raises(PlanError) as exc:
            plan_makespan(make_plan([(0, 60, 1, 0), (50, 100, 2, 0)]))
        assert exc.value.violations


def test_assigned_mask(fix_a):
    assert assigned_mask(fix_a).all() and len(assigned_mask(fix_a)) == 100
    assert not assigned_mask(make_plan([])).any()
    assert assigned_mask(make_plan([(10, 20, 1, 0)])).sum() == 10


def test_map_source_to_plan(fix_a):
    assert map_source_to_plan(fix_a, 60) == (2, 10)
    assert map_source_to_plan(fix_a, 5) == (1, 5)
    assert map_source_to_plan(make_plan([(10, 20, 1, 0)]), 5) is None
    with pytest.raises(PlanError):
        map_source_to_plan(fix_a, 100)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_invariants(seed):
    rng = np.random.default_rng(seed)
    plan = random_plan(rng)
    assert validate_plan(plan) == []
    busy = sum(a.plan_end - a.plan_start for a in plan.assignments)
    assert busy == plan.total_assigned == assigned_mask(plan).sum()
    assert plan_makespan(plan) >= -(-plan.total_assigned // plan.n_agents)
    images = [map_source_to_plan(plan, t) for t in range(plan.timeline.length_frames)]
    images = [m for m in images if m is not None]
    assert len(images) == len(set(images)) == plan.total_assigned

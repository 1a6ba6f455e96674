import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_plan
from synth import (identity_plan, oracle_action_coverage, oracle_collision_rate, oracle_cvr, oracle_frame_coverage,
                   oracle_jump, oracle_ocr, oracle_speed_up, random_annotations, random_plan, random_trajectory)

from nbody_plan.annotations import ActionRecord, AnnotationSet, CausalPair, ObjectTrackSet, Trajectory
from nbody_plan.core import Assignment, ParallelPlan, PlanError, Segment, Timeline
from nbody_plan.metrics import (MetricReport, action_coverage, aggregate, causality_violation_rate, classify_pairs,
                                collision_counts, collision_rate, dumps, evaluate_all, format_table, frame_coverage,
                                jump_distance, object_conflict_rate, report_from_dict, report_to_dict, speed_up,
                                table_row)


def act(s, e, noun="x"):
    return ActionRecord(Segment(s, e), f"take {noun}", "take", noun)


def static_traj(T, xy=(0.0, 0.0)):
    return Trajectory.from_arrays(np.tile(np.asarray(xy, dtype=float), (T, 1)), np.zeros(T))


def split_traj(T=100, far=3.0):
    xy = np.zeros((T, 2))
    xy[T // 2:, 0] = far
    return Trajectory.from_arrays(xy, np.zeros(T))


class TestCoverage:
    def test_fix_a(self, fix_a):
        assert frame_coverage(fix_a) == 1

    def test_quarter(self):
        assert frame_coverage(make_plan([(0, 25, 1, 0)])) == Fraction(1, 4)

    def test_action_inside_half(self, fix_a):
        assert action_coverage(fix_a, [act(20, 30)]) == 1

    def test_action_straddle_counts_once(self, fix_a):
        assert action_coverage(fix_a, [act(45, 55)]) == 1
        assert action_coverage(fix_a, [act(45, 55), act(90, 100)]) == 1

    def test_action_outside(self):
        plan = make_plan([(0, 10, 1, 0)])
        assert action_coverage(plan, [act(20, 30), act(50, 60)]) == 0

    def test_empty_actions(self, fix_a):
        assert action_coverage(fix_a, []) == 1

    def test_segment_iou_variant(self, fix_a):
        # literal per-segment IoU: a 10-frame action inside a 50-frame half has IoU 0.2
        assert action_coverage(fix_a, [act(20, 30)], variant="segment-iou") == 0
        fine = make_plan([(20, 30, 1, 0), (30, 34, 2, 0)])  # IoU 1.0 and 0.4
        assert action_coverage(fine, [act(20, 30), act(30, 40)], variant="segment-iou") == Fraction(1, 2)
        with pytest.raises(ValueError):
            action_coverage(fix_a, [act(0, 5)], variant="iou")

    def test_monotone_under_added_assignment(self):
        before = make_plan([(0, 20, 1, 0)])
        after = make_plan([(0, 20, 1, 0), (40, 60, 2, 0)])
        assert frame_coverage(after) >= frame_coverage(before)


class TestSpeedUp:
    def test_fix_a(self, fix_a):
        assert speed_up(fix_a) == 2

    def test_fix_b(self, fix_b):
        assert speed_up(fix_b) == 1

    def test_sixty_over_fifty(self):
        plan = make_plan([(0, 50, 1, 0), (50, 60, 2, 40)])
        assert speed_up(plan) == Fraction(6, 5)

    def test_empty_plan(self):
        with pytest.raises(PlanError):
            speed_up(make_plan([]))

    def test_invalid_plan_rejected(self):
        with pytest.raises(PlanError):
            speed_up(make_plan([(0, 50, 1, 0), (50, 100, 1, 0)]))


class TestCollision:
    def test_all_at_origin(self, fix_a):
        assert collision_rate(fix_a, static_traj(100)) == 1

    def test_far_apart(self, fix_a):
        assert collision_rate(fix_a, split_traj()) == 0

    def test_single_agent(self, fix_b):
        assert collision_rate(fix_b, static_traj(100)) == 0

    def test_idle_frames_in_denominator(self):
        # P2 works only during plan [0,10); P1 for 50 frames, all poses coincide
        plan = make_plan([(0, 50, 1, 0), (50, 60, 2, 0)])
        assert collision_rate(plan, static_traj(100)) == Fraction(10, 50)

    def test_missing_pose_excluded(self, fix_a):
        traj = static_traj(100)
        xyz, yaw, present = traj.xyz.copy(), traj.yaw.copy(), traj.present.copy()
        present[60:65] = False
        xyz[60:65] = np.nan
        traj = Trajectory(xyz, yaw, present)
        hits, counted, missing = collision_counts(fix_a, traj)
        assert (hits, counted, missing) == (45, 45, 5)
        assert collision_rate(fix_a, traj) == 1


class TestJump:
    def test_fix_a(self, fix_a):
        assert jump_distance(fix_a, split_traj()) == 0.0

    def test_three_over_two(self):
        # P1: [40,50) ends at (0,0), then [50,60) starts at (3,0); P2 holds one segment
        plan = make_plan([(40, 50, 1, 0), (50, 60, 1, 10), (0, 40, 2, 0)])
        assert jump_distance(plan, split_traj()) == pytest.approx(0.75)

    def test_contiguous_segments(self):
        xy = np.stack([np.arange(100) * 0.1, np.zeros(100)], axis=1)
        traj = Trajectory.from_arrays(xy, np.zeros(100))
        plan = make_plan([(0, 30, 1, 0), (30, 60, 1, 30)], n_agents=1)
        # consecutive source frames: the jump is one step of 0.1 m
        assert jump_distance(plan, traj) == pytest.approx(0.1 / 2)

    def test_idle_agent_excluded(self):
        plan = make_plan([(40, 50, 1, 0), (50, 60, 1, 10)], n_agents=3)
        assert jump_distance(plan, split_traj()) == pytest.approx(1.5)


class TestOcr:
    def tracks(self):
        return ObjectTrackSet.from_records([("o1", Segment(10, 20)), ("o1", Segment(60, 70))])

    def test_fix_a(self, fix_a):
        assert object_conflict_rate(fix_a, self.tracks()) == Fraction(1, 5)

    def test_single_agent(self, fix_b):
        assert object_conflict_rate(fix_b, self.tracks()) == 0

    def test_distinct_objects(self, fix_a):
        tracks = ObjectTrackSet.from_records([("o1", Segment(10, 20)), ("o2", Segment(60, 70))])
        assert object_conflict_rate(fix_a, tracks) == 0

    def test_unassigned_frames_do_not_transport(self):
        plan = make_plan([(0, 50, 1, 0), (65, 100, 2, 0)])
        # only source [65,70) of the second interval is assigned; it lands on plan [0,5)
        assert object_conflict_rate(plan, self.tracks()) == 0


class TestCvr:
    def test_reverse(self, fix_a):
        pairs = [CausalPair(Segment(10, 20), Segment(60, 70), "prep-step")]
        rate, breakdown = causality_violation_rate(fix_a, pairs)
        assert rate == 1
        assert breakdown["prep-step"] == {"reverse": 1, "miss": 0}

    def test_identity_plan(self, fix_b):
        pairs = [CausalPair(Segment(10, 20), Segment(60, 70), "prep-step"),
                 CausalPair(Segment(0, 5), Segment(5, 6), "step-step")]
        assert causality_violation_rate(fix_b, pairs)[0] == 0

    def test_missing_cause(self):
        plan = make_plan([(20, 100, 1, 0)], n_agents=1)
        pairs = [CausalPair(Segment(10, 20), Segment(60, 70), "step-step")]
        rate, breakdown = causality_violation_rate(plan, pairs)
        assert rate == 1 and breakdown["step-step"]["miss"] == 1

    def test_absent_effect_is_ok(self):
        plan = make_plan([(0, 50, 1, 0)], n_agents=1)
        assert classify_pairs(plan, [CausalPair(Segment(10, 20), Segment(60, 70), "step-step")]) == ["ok"]

    def test_half_present_threshold(self):
        # exactly half of the cause is assigned -> present
        plan = make_plan([(15, 20, 1, 0), (60, 70, 1, 10)], n_agents=1)
        pairs = [CausalPair(Segment(10, 20), Segment(60, 70), "step-step")]
        assert classify_pairs(plan, pairs) == ["ok"]
        plan = make_plan([(16, 20, 1, 0), (60, 70, 1, 10)], n_agents=1)
        assert classify_pairs(plan, pairs) == ["miss"]

    def test_empty_pairs(self, fix_a):
        assert causality_violation_rate(fix_a, []) == (0, {"prep-step": {"reverse": 0, "miss": 0},
                                                          "step-step": {"reverse": 0, "miss": 0}})


def fix_a_annotations():
    actions = [act(20, 30, "knife"), act(45, 55, "board")]
    tracks = ObjectTrackSet.from_records([("o1", Segment(10, 20)), ("o1", Segment(60, 70))])
    pairs = [CausalPair(Segment(10, 20), Segment(60, 70), "prep-step")]
    return AnnotationSet(actions, tracks, pairs)


class TestEvaluateAll:
    def test_fix_b_sanity(self, fix_b):
        ann = fix_a_annotations()
        rep = evaluate_all(fix_b, ann, split_traj())
        assert (rep.frame_coverage, rep.action_coverage, rep.speed_up) == (1, 1, 1)
        assert (rep.collision_rate, rep.ocr, rep.cvr, rep.jump_m) == (0, 0, 0, 0.0)

    def test_fix_a_componentwise(self, fix_a):
        ann = fix_a_annotations()
        traj = split_traj()
        rep = evaluate_all(fix_a, ann, traj)
        assert rep.frame_coverage == frame_coverage(fix_a) == 1
        assert rep.action_coverage == action_coverage(fix_a, ann.actions) == 1
        assert rep.speed_up == speed_up(fix_a) == 2
        assert rep.collision_rate == collision_rate(fix_a, traj) == 0
        assert rep.jump_m == jump_distance(fix_a, traj) == 0.0
        assert rep.ocr == object_conflict_rate(fix_a, ann.tracks) == Fraction(1, 5)
        assert rep.cvr == causality_violation_rate(fix_a, ann.pairs)[0] == 1
        assert rep.n_violations == 1
        assert [s.busy_frames for s in rep.per_agent] == [50, 50]
        assert [s.walking_m for s in rep.per_agent] == [0.0, 0.0]

    def test_invalid_plan(self):
        bad = make_plan([(0, 60, 1, 0), (50, 100, 2, 0)])
        with pytest.raises(PlanError, match="source_overlap|overlap"):
            evaluate_all(bad, fix_a_annotations(), split_traj())

    def test_flags(self, fix_a):
        rep = evaluate_all(fix_a, AnnotationSet([], ObjectTrackSet({}), []), split_traj())
        assert {"no_actions", "no_causal_pairs", "no_object_tracks"} <= set(rep.flags)
        assert rep.action_coverage == 1 and rep.cvr == 0

    def test_bounds(self, rng):
        for _ in range(30):
            plan = random_plan(rng)
            if not plan.assignments:
                continue
            T = plan.timeline.length_frames
            rep = evaluate_all(plan, random_annotations(rng, T), random_trajectory(rng, T))
            assert 0 <= rep.speed_up <= plan.n_agents
            for name in ("frame_coverage", "action_coverage", "collision_rate", "ocr", "cvr"):
                assert 0 <= getattr(rep, name) <= 1
            if plan.n_agents == 1:
                assert rep.collision_rate == 0 and rep.ocr == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    plan = random_plan(rng)
    if not plan.assignments:
        return
    T = plan.timeline.length_frames
    ann = random_annotations(rng, T)
    traj = random_trajectory(rng, T, room=1.0, p_missing=0.05)
    rep = evaluate_all(plan, ann, traj)
    assert rep.frame_coverage == oracle_frame_coverage(plan)
    assert rep.speed_up == oracle_speed_up(plan)
    assert rep.action_coverage == oracle_action_coverage(plan, ann.actions)
    assert rep.collision_rate == oracle_collision_rate(plan, traj)
    assert rep.jump_m == pytest.approx(oracle_jump(plan, traj), abs=1e-9)
    assert rep.ocr == oracle_ocr(plan, ann.tracks)
    rate, outcomes = oracle_cvr(plan, ann.pairs)
    assert rep.cvr == rate
    assert rep.n_violations == sum(o != "ok" for o in outcomes)


def report(speed, cvr=Fraction(0), n_pairs=1):
    return MetricReport(Fraction(1), Fraction(1), Fraction(speed), Fraction(0), 0.5, Fraction(0), Fraction(cvr),
                        {"prep-step": {"reverse": 1, "miss": 0}, "step-step": {"reverse": 0, "miss": 2}},
                        n_pairs=n_pairs)


class TestAggregate:
    def test_mean(self):
        out = aggregate([report(1), report(2)])
        assert out["speed_up"] == Fraction(3, 2) and out["n_videos"] == 2

    def test_single(self):
        out = aggregate([report(2, Fraction(1, 3))])
        assert out["speed_up"] == 2 and out["cvr"] == Fraction(1, 3) and out["jump_m"] == 0.5

    def test_cvr_skips_empty(self):
        out = aggregate([report(1, Fraction(1, 2)), report(1, Fraction(0), n_pairs=0)])
        assert out["cvr"] == Fraction(1, 2) and out["n_videos_cvr"] == 1
        assert out["cvr_breakdown"]["step-step"]["miss"] == 4

    def test_no_pairs_anywhere(self):
        assert aggregate([report(1, n_pairs=0)])["cvr"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestSerialisation:
    def test_roundtrip(self, fix_a):
        rep = evaluate_all(fix_a, fix_a_annotations(), split_traj())
        doc = json.loads(dumps(report_to_dict(rep)))
        assert report_from_dict(doc) == rep
        assert doc["table"]["speed_up"] == 2.0
        assert doc["table"]["ocr_pct"] == 20.0
        assert doc["table"]["coverage_pct"] == 100.0

    def test_table_row_percent(self):
        assert table_row({"frame_coverage": Fraction(2, 3), "action_coverage": 1, "speed_up": Fraction(5, 3),
                          "collision_rate": 0, "jump_m": 0.123, "ocr": 0, "cvr": None}) == {
            "coverage_pct": 66.67, "action_coverage_pct": 100.0, "speed_up": 1.67, "collision_rate_pct": 0.0,
            "jump_m": 0.12, "ocr_pct": 0.0, "cvr_pct": None}

    def test_format_table(self):
        text = format_table([("naive", table_row(report(2)))], report(2).cvr_breakdown)
        lines = text.splitlines()
        assert lines[0].startswith("Method") and "Speed-Up" in lines[0]
        assert "2.00" in lines[2]
        assert lines[-1].split()[-1] == "3"

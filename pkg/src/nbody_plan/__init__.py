"""Represent, score and generate N-agent parallel executions of a single-person activity timeline."""
from .annotations import (ActionRecord, AnnotationError, AnnotationSet, CausalPair, ObjectTrackSet, PoseSample,
                          Trajectory, load_actions, load_causal_pairs, load_object_tracks, load_plan, load_poses,
                          save_plan)
from .core import (Assignment, ParallelPlan, PlanError, Segment, Timeline, Violation, assigned_mask,
                   map_source_to_plan, plan_makespan, validate_plan)
from .geometry import BodyBox, agent_pose_at, is_collide, walking_distance
from .metrics import MetricReport, aggregate, evaluate_all

__version__ = "0.1.0"

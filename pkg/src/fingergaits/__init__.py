"""In-hand object manipulation with finger gaiting.

Velocity-level gait planning (linear programs over joint velocities),
contact-force distribution (friction-cone quadratic program), object pose
control with feedback linearization, and a deterministic fingertip-contact
physics plant for closed-loop scenario runs.
"""

from .force_optimizer import (
    ForceProblem,
    ForceSolution,
    assemble_problem,
    build_grasp_map,
    build_pyramid,
    kkt_residuals,
    optimize_forces,
    torques_from_forces,
)
from .gaits_planner import (
    GaitLpSolution,
    GaitPlanner,
    joint_limit_weights,
    quality_rate_gradient,
    solve_gait_lp,
    velocity_force_torque,
)
from .grasp_quality import (
    DegenerateSupportError,
    NoGaitCandidateError,
    QualityRateFilter,
    QualityReport,
    evaluate_quality,
    gaiting_should_stop,
    gaiting_should_trigger,
    hand_manipulability,
    hull_area,
    object_grasp_quality,
    select_free_finger,
    total_quality,
)
from .kinematics import (
    FingerGeometry,
    HandModel,
    build_hand,
    contact_frame,
    finger_jacobian,
    forward_kinematics,
    hand_jacobian,
    tip_position,
)
from .object_controller import (
    LtiLaw,
    PdLaw,
    TorquePid,
    feedback_linearization,
    load_lti,
    pose_error,
)
from .sim import World, make_surface, pose_grasp

__version__ = "0.1.0"

__all__ = [
    "DegenerateSupportError",
    "FingerGeometry",
    "ForceProblem",
    "ForceSolution",
    "GaitLpSolution",
    "GaitPlanner",
    "HandModel",
    "LtiLaw",
    "NoGaitCandidateError",
    "PdLaw",
    "QualityRateFilter",
    "QualityReport",
    "TorquePid",
    "World",
    "assemble_problem",
    "build_grasp_map",
    "build_hand",
    "build_pyramid",
    "contact_frame",
    "evaluate_quality",
    "feedback_linearization",
    "finger_jacobian",
    "forward_kinematics",
    "gaiting_should_stop",
    "gaiting_should_trigger",
    "hand_jacobian",
    "hand_manipulability",
    "hull_area",
    "joint_limit_weights",
    "kkt_residuals",
    "load_lti",
    "make_surface",
    "object_grasp_quality",
    "optimize_forces",
    "pose_error",
    "pose_grasp",
    "quality_rate_gradient",
    "select_free_finger",
    "solve_gait_lp",
    "tip_position",
    "torques_from_forces",
    "total_quality",
    "velocity_force_torque",
]

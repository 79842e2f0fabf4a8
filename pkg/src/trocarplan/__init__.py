"""Joint-space path planning for a trocar-constrained surgical holder arm.

The package maps anatomical obstacle surfaces into the joint space of a
5-DOF arm whose forceps pivots about a fixed trocar port, builds a
Riemannian metric that trades joint motion against obstacle clearance, and
plans smooth trajectories on a sampled roadmap.  ``python -m trocarplan``
exposes the mapping, planning, comparison, and calibration workflows.
"""

from .arm_model import (
    ArmGeometry,
    JointConfig,
    forward_kinematics,
    grad_fg,
    inverse_kinematics,
    lift,
)
from .config import RunConfig, default_config, load_config, parse_config
from .errors import (
    AtBoundary,
    ConfigError,
    DegenerateInput,
    DerivativeInconsistency,
    EmptyMesh,
    IKFailure,
    LimitViolation,
    NoHit,
    NonConvergence,
    NoSolution,
    PlanningError,
    RejectionBudgetExceeded,
    Unreachable,
)
from .evaluation import (
    CalibrationResult,
    ComparisonReport,
    MetricsReport,
    calibrate_sigma_q,
    compare,
    insertion_angle,
    path_metrics,
)
from .joint_obstacle_map import (
    BoundaryMesh,
    RcmKinematics,
    build_boundary,
    curvature_from_frame,
    export_mesh_obj,
    export_mesh_sidecar,
    nearest_forbidden_bruteforce,
    nearest_forbidden_greedy,
)
from .riemannian_metric import (
    edge_cost,
    geodesic_residual,
    metric_kinematic,
    metric_obstacle,
    path_length,
)
from .roadmap_planner import (
    MappedJointCurve,
    PlannerParams,
    Roadmap,
    Trajectory,
    build_roadmap,
    dijkstra,
    plan_joint_space,
    plan_position_space,
    spline_fit,
)
from .workspace_scene import (
    Ellipsoid,
    Intersection,
    Plane,
    Scene,
    Sphere,
    assemble_scene,
    make_cholecystectomy_scene,
    make_hemisphere_scene,
)

__version__ = "0.1.0"

__all__ = [
    "ArmGeometry",
    "AtBoundary",
    "BoundaryMesh",
    "CalibrationResult",
    "ComparisonReport",
    "ConfigError",
    "DegenerateInput",
    "DerivativeInconsistency",
    "Ellipsoid",
    "EmptyMesh",
    "IKFailure",
    "Intersection",
    "JointConfig",
    "LimitViolation",
    "MappedJointCurve",
    "MetricsReport",
    "NoHit",
    "NonConvergence",
    "NoSolution",
    "Plane",
    "PlannerParams",
    "PlanningError",
    "RcmKinematics",
    "RejectionBudgetExceeded",
    "Roadmap",
    "RunConfig",
    "Scene",
    "Sphere",
    "Trajectory",
    "Unreachable",
    "assemble_scene",
    "build_boundary",
    "build_roadmap",
    "calibrate_sigma_q",
    "compare",
    "curvature_from_frame",
    "default_config",
    "dijkstra",
    "edge_cost",
    "export_mesh_obj",
    "export_mesh_sidecar",
    "forward_kinematics",
    "geodesic_residual",
    "grad_fg",
    "inverse_kinematics",
    "insertion_angle",
    "lift",
    "load_config",
    "make_cholecystectomy_scene",
    "make_hemisphere_scene",
    "metric_kinematic",
    "metric_obstacle",
    "nearest_forbidden_bruteforce",
    "nearest_forbidden_greedy",
    "parse_config",
    "path_length",
    "path_metrics",
    "plan_joint_space",
    "plan_position_space",
    "spline_fit",
    "__version__",
]

"""Extrinsic calibration of RGB-D camera pairs from matched line features.

The package estimates the rigid transform between a *source* and a *target*
camera without requiring field-of-view overlap at calibration time.  Matched
3D line segments (and, where target depth is missing, 2D projections) feed a
closed-form rotation/translation solver built on the Cayley--Gibbs--Rodrigues
parametrization, followed by a Levenberg--Marquardt refinement and a
translation-consistency vote that decides when enough evidence has been seen.
"""

from .constraints import (
    CaseKind,
    Correspondence,
    QuadraticSystem,
    assemble,
    classify,
    full3d_rows,
    line_reprojection_residual,
    monomial_vector,
    pnl_rows,
    point_to_line_residual,
    rbar_coefficients,
)
from .errors import (
    CalibrationError,
    DegenerateLine,
    DegenerateProjection,
    DegenerateTranslation,
    EmptyInput,
    IllConditionedPlane,
    InfeasibleSpec,
    InsufficientLines,
    NearSingularRotation,
    NoRealSolution,
    ParallelLines,
    ParallelPlanes,
    RankDeficient,
    SchemaError,
    TooFewSamples,
    WrongKind,
)
from .geometry import (
    CGRParams,
    CameraIntrinsics,
    Extrinsics,
    Line2D,
    PluckerLine,
    cgr_to_rotation,
    dual_plucker_matrix,
    line_projection_matrix,
    plucker_from_points,
    project_so3,
    rotation_angle,
    rotation_to_cgr,
    transform_line,
)
from .metrics import (
    PlaneMergeInput,
    PlaneMergeMetrics,
    fit_plane,
    plane_merge_metrics,
    pose_variation_errors,
    rotation_step_errors,
    square_size_error_mm,
    translation_step_errors,
)
from .pipeline import (
    CalibrationReport,
    LineObservation,
    PipelineConfig,
    RansacConfig,
    TerminationReason,
    ingest,
    ransac_fit_line,
    run,
    try_finalize,
)
from .selection import (
    CandidateLine,
    VotingResult,
    candidate_from_full3d,
    candidate_from_pnl,
    convergence_voting,
    equidistant_point,
    gate_rotation,
    rotation_rows,
)
from .simulator import RigSpec, cell_seed, generate, pose_errors, rotation_about_y, sweep
from .solver import (
    PoseSolution,
    SolverConfig,
    brute_force_roots,
    eliminate_translation,
    jacobian_check,
    refine,
    solve_quadratic_system,
)

__version__ = "0.1.0"

__all__ = [
    "CGRParams",
    "CalibrationError",
    "CalibrationReport",
    "CameraIntrinsics",
    "CandidateLine",
    "CaseKind",
    "Correspondence",
    "DegenerateLine",
    "DegenerateProjection",
    "DegenerateTranslation",
    "EmptyInput",
    "Extrinsics",
    "IllConditionedPlane",
    "InfeasibleSpec",
    "InsufficientLines",
    "Line2D",
    "LineObservation",
    "NearSingularRotation",
    "NoRealSolution",
    "ParallelLines",
    "ParallelPlanes",
    "PipelineConfig",
    "PlaneMergeInput",
    "PlaneMergeMetrics",
    "PluckerLine",
    "PoseSolution",
    "QuadraticSystem",
    "RankDeficient",
    "RansacConfig",
    "RigSpec",
    "SchemaError",
    "SolverConfig",
    "TerminationReason",
    "TooFewSamples",
    "VotingResult",
    "WrongKind",
    "assemble",
    "brute_force_roots",
    "candidate_from_full3d",
    "candidate_from_pnl",
    "cell_seed",
    "cgr_to_rotation",
    "classify",
    "convergence_voting",
    "dual_plucker_matrix",
    "eliminate_translation",
    "equidistant_point",
    "fit_plane",
    "full3d_rows",
    "gate_rotation",
    "generate",
    "ingest",
    "jacobian_check",
    "line_projection_matrix",
    "line_reprojection_residual",
    "monomial_vector",
    "plane_merge_metrics",
    "plucker_from_points",
    "pnl_rows",
    "point_to_line_residual",
    "pose_errors",
    "pose_variation_errors",
    "project_so3",
    "ransac_fit_line",
    "rbar_coefficients",
    "refine",
    "rotation_about_y",
    "rotation_angle",
    "rotation_rows",
    "rotation_step_errors",
    "rotation_to_cgr",
    "run",
    "solve_quadratic_system",
    "square_size_error_mm",
    "sweep",
    "transform_line",
    "translation_step_errors",
    "try_finalize",
]

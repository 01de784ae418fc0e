"""Collaborative two-vehicle localization.

A lead vehicle with a trustworthy pose estimate broadcasts it; a perception
channel on the lead vehicle measures the relative pose of a following vehicle;
composing the two yields absolute pose measurements for the follower, which a
two-stage extended Kalman filter fuses with the follower's own noisy odometry.
"""

from ._version import __version__
from .dataio import (
    ESTIMATE_COLUMNS,
    HEADER_COLUMNS,
    TRAJECTORY_KINDS,
    SyncSpec,
    TrajectoryLog,
    export_estimates,
    export_trajectory,
    generate_synthetic,
    load_trajectory,
    synchronize,
)
from .ekf import (
    STATE_DIM,
    EkfNode,
    FilterNodeConfig,
    MeasurementEvent,
    MeasurementKind,
    NodeId,
    ProcessModel,
    StateEstimate,
    TwoStageLocalizer,
    default_process_noise,
    differential_velocity,
    measurement_covariance,
    predict,
    state_from_pose,
    transition,
    transition_jacobian,
    update_absolute,
    update_differential,
)
from .errors import ColocError, DataError, FrameMismatchError, NumericError, OutOfOrderError
from .evaluation import (
    AlignmentMode,
    Association,
    ErrorStats,
    EvaluationResult,
    MetricSeries,
    RigidTransform,
    align,
    apply_alignment,
    associate,
    compute_errors,
    evaluate,
    export_error_series,
    export_stats_json,
)
from .geometry import (
    BODY_ADAS,
    BODY_SMART,
    LOCAL,
    WORLD,
    Agent,
    Frame,
    Pose,
    Quaternion,
    body_frame,
    compose,
    enu_to_ned,
    invert,
    ned_to_enu,
    quat_yaw,
    relative_pose,
    rotation_geodesic,
    wrap_angle,
)
from .harness import (
    CellReport,
    EkfSettings,
    EstimateRecord,
    EvalSettings,
    ExperimentConfig,
    InputConfig,
    RunArtifacts,
    RunReport,
    SeedResult,
    SweepGrid,
    SyntheticSpec,
    cell_aggregate,
    config_from_dict,
    config_to_dict,
    derive_run_seed,
    execute_run,
    format_table,
    load_config,
    report_json,
    run_report,
    run_single,
    run_sweep,
    write_estimate_csv,
)
from .noise import NoiseSpec, RandomStream, perturb_pose, perturb_translation, perturb_yaw
from .perception import (
    PERCEPTION_SOURCE,
    PairedSample,
    PerceptionConfig,
    gate_pair,
    make_measurement,
    pair_streams,
    rate_limit,
    simulate_perception,
)

__all__ = [
    "Agent",
    "AlignmentMode",
    "Association",
    "BODY_ADAS",
    "BODY_SMART",
    "CellReport",
    "ColocError",
    "DataError",
    "ESTIMATE_COLUMNS",
    "EkfNode",
    "EkfSettings",
    "ErrorStats",
    "EstimateRecord",
    "EvalSettings",
    "EvaluationResult",
    "ExperimentConfig",
    "FilterNodeConfig",
    "Frame",
    "FrameMismatchError",
    "HEADER_COLUMNS",
    "InputConfig",
    "LOCAL",
    "MeasurementEvent",
    "MeasurementKind",
    "MetricSeries",
    "NodeId",
    "NoiseSpec",
    "NumericError",
    "OutOfOrderError",
    "PERCEPTION_SOURCE",
    "PairedSample",
    "PerceptionConfig",
    "Pose",
    "ProcessModel",
    "Quaternion",
    "RandomStream",
    "RigidTransform",
    "RunArtifacts",
    "RunReport",
    "STATE_DIM",
    "SeedResult",
    "StateEstimate",
    "SweepGrid",
    "SyncSpec",
    "SyntheticSpec",
    "TRAJECTORY_KINDS",
    "TrajectoryLog",
    "TwoStageLocalizer",
    "WORLD",
    "align",
    "apply_alignment",
    "associate",
    "body_frame",
    "cell_aggregate",
    "compose",
    "compute_errors",
    "config_from_dict",
    "config_to_dict",
    "default_process_noise",
    "derive_run_seed",
    "differential_velocity",
    "enu_to_ned",
    "evaluate",
    "execute_run",
    "export_error_series",
    "export_estimates",
    "export_stats_json",
    "export_trajectory",
    "format_table",
    "gate_pair",
    "generate_synthetic",
    "invert",
    "load_config",
    "load_trajectory",
    "make_measurement",
    "measurement_covariance",
    "ned_to_enu",
    "pair_streams",
    "perturb_pose",
    "perturb_translation",
    "perturb_yaw",
    "predict",
    "quat_yaw",
    "rate_limit",
    "relative_pose",
    "report_json",
    "rotation_geodesic",
    "run_report",
    "run_single",
    "run_sweep",
    "simulate_perception",
    "state_from_pose",
    "synchronize",
    "transition",
    "transition_jacobian",
    "update_absolute",
    "update_differential",
    "wrap_angle",
    "write_estimate_csv",
    "__version__",
]

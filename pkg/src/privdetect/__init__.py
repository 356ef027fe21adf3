"""Privacy-aware distributed attack detection for networks of linear subsystems."""
from ._backend import BACKEND, HAS_NUMBA
from .sysmodel import (
    CovertAttack,
    Decomposition,
    DivergenceError,
    ModelError,
    Network,
    NetworkTrajectory,
    SubsystemModel,
    build_plan,
    decompose_interconnection,
    rollout,
    simulate,
    sinusoidal_ramp_attack,
)
from .umv_filter import FilterDesignError, FilterGains, FilterState, design_gains, filter_step, steady_state_error_cov
from .detect import (
    AdaptiveSample,
    ResidualModel,
    adaptive_pd,
    adaptive_pd_real,
    adaptive_pfa,
    adaptive_statistic,
    adaptive_threshold,
    detection_probability,
    false_alarm_probability,
    glrt_statistic,
    mismatched_pfa,
    neighbor_residual,
    noncentrality,
    residual_covariance,
    threshold_from_pfa,
)
from .privacy_mi import DegenerateJointError, JointCovariance, build_stacked, joint_covariance, mutual_information
from .noise_design import (
    PrivacySchedule,
    SolverError,
    SolverOptions,
    SolverReport,
    design_context,
    design_fa_constrained,
    design_weighted,
    mi_gradient,
    total_mi,
)
from .bench_cli import ConfigError, ExperimentConfig, build_pendulum_benchmark, run_experiment

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "CovertAttack",
    "Decomposition",
    "DivergenceError",
    "ModelError",
    "Network",
    "NetworkTrajectory",
    "SubsystemModel",
    "build_plan",
    "decompose_interconnection",
    "rollout",
    "simulate",
    "sinusoidal_ramp_attack",
    "FilterDesignError",
    "FilterGains",
    "FilterState",
    "design_gains",
    "filter_step",
    "steady_state_error_cov",
    "AdaptiveSample",
    "ResidualModel",
    "adaptive_pd",
    "adaptive_pd_real",
    "adaptive_pfa",
    "adaptive_statistic",
    "adaptive_threshold",
    "detection_probability",
    "false_alarm_probability",
    "glrt_statistic",
    "mismatched_pfa",
    "neighbor_residual",
    "noncentrality",
    "residual_covariance",
    "threshold_from_pfa",
    "DegenerateJointError",
    "JointCovariance",
    "build_stacked",
    "joint_covariance",
    "mutual_information",
    "PrivacySchedule",
    "SolverError",
    "SolverOptions",
    "SolverReport",
    "design_context",
    "design_fa_constrained",
    "design_weighted",
    "mi_gradient",
    "total_mi",
    "ConfigError",
    "ExperimentConfig",
    "build_pendulum_benchmark",
    "run_experiment",
]

__version__ = "0.1.0"

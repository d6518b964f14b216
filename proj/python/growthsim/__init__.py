"""Plant growth curve fitting, environment-response models and the episodic
control simulator."""

from ._growthsim import (
    Batch,
    ConfigError,
    ContractError,
    DayRecord,
    EnvStats,
    FitResult,
    GrowthParams,
    RollingFitSeries,
    SimConfig,
    Simulator,
    SyntheticGroundTruth,
    TrainedGrowthModel,
    benchmark_on_batches,
    compute_env_stats,
    env_field_names,
    evaluate_random,
    extrapolate_next_day,
    fit_logistic,
    generate_synthetic_batches,
    inverse_logistic,
    load_env_stats,
    load_model,
    logistic_cc,
    metrics,
    reward,
    rolling_fits,
    train_model_on_batches,
)

__all__ = [
    "Batch",
    "ConfigError",
    "ContractError",
    "DayRecord",
    "EnvStats",
    "FitResult",
    "GrowthParams",
    "RollingFitSeries",
    "SimConfig",
    "Simulator",
    "SyntheticGroundTruth",
    "TrainedGrowthModel",
    "benchmark_on_batches",
    "compute_env_stats",
    "env_field_names",
    "evaluate_random",
    "extrapolate_next_day",
    "fit_logistic",
    "generate_synthetic_batches",
    "inverse_logistic",
    "load_env_stats",
    "load_model",
    "logistic_cc",
    "metrics",
    "reward",
    "rolling_fits",
    "train_model_on_batches",
]

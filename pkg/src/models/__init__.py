"""Models package for the Interaction Kernel Learner."""

from .experiment import (
    BenchmarkSummary,
    CellResult,
    CellStatus,
    CoercivityConfig,
    ExperimentConfig,
    KernelConfig,
    LearningConfig,
    MeasureConfig,
    NoiseModel,
    OverflowMode,
    PredictionConfig,
    Profile,
    SamplerConfig,
    SystemConfig,
    VelocityMode,
    load_config,
)

__all__ = [
    "BenchmarkSummary",
    "CellResult",
    "CellStatus",
    "CoercivityConfig",
    "ExperimentConfig",
    "KernelConfig",
    "LearningConfig",
    "MeasureConfig",
    "NoiseModel",
    "OverflowMode",
    "PredictionConfig",
    "Profile",
    "SamplerConfig",
    "SystemConfig",
    "VelocityMode",
    "load_config",
]

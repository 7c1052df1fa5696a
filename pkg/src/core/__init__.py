"""Core numerics for the Interaction Kernel Learner."""

from .coercivity import CoercivityEstimate, estimate_coercivity, orthonormalize
from .dynamics import eval_rhs, generate_batch, simulate, snorm
from .errors import (
    ConfigError,
    HypothesisSpaceError,
    IntegrationError,
    KernelEvaluationError,
    KernelLearnError,
    MeasureError,
    ShapeMismatchError,
    SolverError,
)
from .evaluation import fit_rate, prediction_experiment, trajectory_error
from .hypothesis import Estimator, HypothesisSpace, choose_dimension, smooth_estimator
from .kernels import KERNEL_REGISTRY, Kernel, build_kernel
from .measure import PairwiseMeasure, build_measure, relative_kernel_error
from .regression import NormalSystem, assemble_batch, solve
from .samplers import InitialSampler, SamplerLaw
from .system import SystemSpec, TrajectoryBatch

__all__ = [
    "CoercivityEstimate",
    "ConfigError",
    "Estimator",
    "HypothesisSpace",
    "HypothesisSpaceError",
    "InitialSampler",
    "IntegrationError",
    "KERNEL_REGISTRY",
    "Kernel",
    "KernelEvaluationError",
    "KernelLearnError",
    "MeasureError",
    "NormalSystem",
    "PairwiseMeasure",
    "SamplerLaw",
    "ShapeMismatchError",
    "SolverError",
    "SystemSpec",
    "TrajectoryBatch",
    "assemble_batch",
    "build_kernel",
    "build_measure",
    "choose_dimension",
    "estimate_coercivity",
    "eval_rhs",
    "fit_rate",
    "generate_batch",
    "orthonormalize",
    "prediction_experiment",
    "relative_kernel_error",
    "simulate",
    "smooth_estimator",
    "snorm",
    "solve",
    "trajectory_error",
]

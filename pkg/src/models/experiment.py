"""Pydantic models for experiment configuration and results."""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError
from ..core.kernels import KERNEL_REGISTRY, build_kernel
from ..core.samplers import SAMPLER_KINDS, InitialSampler, SamplerLaw
from ..core.system import SystemSpec, equispaced_times, extended_times


class VelocityMode(str, Enum):
    """How training velocities are obtained."""
    EXACT = "exact"
    FINITE_DIFFERENCE = "finite_difference"


class NoiseModel(str, Enum):
    """Observation noise applied to positions and velocities."""
    NONE = "none"
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class OverflowMode(str, Enum):
    """Handling of pairwise distances beyond the hypothesis interval."""
    ERROR = "error"
    CLAMP = "clamp"


class Profile(str, Enum):
    """Experiment scale."""
    CI = "ci"
    FULL = "full"


class CellStatus(str, Enum):
    """Outcome of one (M, trial) learning cell."""
    COMPLETED = "completed"
    FAILED = "failed"


class KernelConfig(BaseModel):
    """Registry reference to an interaction kernel."""
    name: str = Field(..., description="Kernel registry name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Kernel parameters")

    @field_validator("name")
    @classmethod
    def _known(cls, value: str) -> str:
        if value not in KERNEL_REGISTRY:
            raise ValueError(f"unknown kernel '{value}', known kernels: {sorted(KERNEL_REGISTRY)}")
        return value

    @model_validator(mode="after")
    def _buildable(self) -> "KernelConfig":
        build_kernel(self.name, self.params)
        return self


class SamplerConfig(BaseModel):
    """Initial-condition law of one agent type."""
    kind: str = Field(..., description=f"One of {', '.join(SAMPLER_KINDS)}")
    lo: float = Field(0.0, description="Lower end of a uniform interval")
    hi: float = Field(1.0, description="Upper end of a uniform interval")
    radius: float = Field(1.0, gt=0.0, description="Disk radius")
    r_in: float = Field(0.0, ge=0.0, description="Annulus inner radius")
    r_out: float = Field(1.0, gt=0.0, description="Annulus outer radius")
    lam: float = Field(1.0, gt=0.0, description="Exchangeable-Gaussian lambda")

    @model_validator(mode="after")
    def _valid_law(self) -> "SamplerConfig":
        self.to_law()
        return self

    def to_law(self) -> SamplerLaw:
        return SamplerLaw(**self.model_dump())


class SystemConfig(BaseModel):
    """Forward model and observation grid."""
    d: int = Field(..., ge=1, description="Spatial dimension")
    type_sizes: List[int] = Field(..., min_length=1, description="Agents per type")
    kernels: List[List[KernelConfig]] = Field(..., description="K x K kernel grid, row k acted on by column k'")
    sampler: List[SamplerConfig] = Field(..., description="One initial law per type")
    t_start: float = Field(0.0, description="First observation time t_1")
    t_end: float = Field(..., description="Last observation time t_L")
    t_final: float = Field(..., description="End of the prediction window t_f")
    L: int = Field(..., ge=1, description="Observation times on [t_1, t_L]")

    @model_validator(mode="after")
    def _consistent(self) -> "SystemConfig":
        K = len(self.type_sizes)
        if any(n < 1 for n in self.type_sizes):
            raise ValueError("every type needs at least one agent")
        if len(self.kernels) != K or any(len(row) != K for row in self.kernels):
            raise ValueError(f"kernel grid must be {K}x{K}")
        if len(self.sampler) != K:
            raise ValueError(f"need {K} sampler laws, got {len(self.sampler)}")
        if self.L > 1 and not self.t_start < self.t_end:
            raise ValueError("t_start must be before t_end")
        if self.t_final < self.t_end:
            raise ValueError("t_final must not precede t_end")
        return self

    @property
    def K(self) -> int:
        return len(self.type_sizes)

    def build_spec(self) -> SystemSpec:
        kernels = [[build_kernel(entry.name, entry.params) for entry in row] for row in self.kernels]
        return SystemSpec(d=self.d, type_sizes=tuple(self.type_sizes), kernels=kernels)

    def build_sampler(self) -> InitialSampler:
        return InitialSampler(laws=tuple(entry.to_law() for entry in self.sampler))

    def observation_times(self, extra_step: bool = False) -> np.ndarray:
        """t_1..t_L, plus t_{L+1} when velocities come from finite differences."""
        if extra_step:
            return extended_times(self.t_start, self.t_end, self.L)
        return equispaced_times(self.t_start, self.t_end, self.L)


class LearningConfig(BaseModel):
    """Hypothesis spaces and training data."""
    degree: int = Field(0, ge=0, le=1, description="Piecewise polynomial degree")
    regularity: float = Field(1.0, gt=0.0, description="Regularity s in the dimension rule")
    multiplier: float = Field(..., gt=0.0, description="Multiplier c in the dimension rule")
    R: Optional[float] = Field(None, gt=0.0, description="Hypothesis interval end; default max observed distance")
    M: List[int] = Field(..., min_length=1, description="Training trajectory counts, ascending")
    trials: int = Field(10, ge=1, description="Independent learning trials per M")
    velocity: VelocityMode = Field(VelocityMode.EXACT, description="Velocity source")
    noise: NoiseModel = Field(NoiseModel.NONE, description="Observation noise model")
    sigma: float = Field(0.0, ge=0.0, description="Noise level")
    overflow: OverflowMode = Field(OverflowMode.ERROR, description="Distances beyond the interval")
    clip_to_support: bool = Field(False, description="Use the observed distance support as interval")

    @field_validator("M")
    @classmethod
    def _ascending(cls, value: List[int]) -> List[int]:
        if any(m < 2 for m in value):
            raise ValueError("every M must be at least 2")
        if value != sorted(value) or len(set(value)) != len(value):
            raise ValueError("M list must be strictly ascending")
        return value


class MeasureConfig(BaseModel):
    """Reference measure for error metrics."""
    M_rho: int = Field(100000, ge=1, description="Trajectories for the reference measure")
    bins: int = Field(1000, ge=1, description="Histogram bins")


class PredictionConfig(BaseModel):
    """Trajectory prediction experiment."""
    enabled: bool = Field(True, description="Run the prediction experiment per cell")
    ics: int = Field(10, ge=0, description="Initial conditions per class")
    nodes: int = Field(200, ge=2, description="Grid points per window")
    large_n_factor: int = Field(4, ge=1, description="Agent multiplier of the large-N class")


class CoercivityConfig(BaseModel):
    """Coercivity estimation."""
    M: int = Field(100000, ge=1, description="Trajectories used to estimate the coercivity constant")
    partitions: List[int] = Field(default_factory=lambda: [10, 20, 40], description="Partition counts to test")
    degree: Optional[int] = Field(None, ge=0, le=1, description="Degree override; default learning degree")
    clip_to_support: bool = Field(False, description="Partition the observed support instead of [0, R]")


class ExperimentConfig(BaseModel):
    """Full benchmark configuration."""
    name: str = Field(..., description="Experiment name used in results")
    description: str = Field("", description="Free-form description")
    seed: Optional[int] = Field(None, ge=0, description="Experiment seed; default from settings")
    system: SystemConfig = Field(..., description="System block")
    learning: LearningConfig = Field(..., description="Learning block")
    measure: MeasureConfig = Field(default_factory=MeasureConfig, description="Measure block")
    prediction: PredictionConfig = Field(default_factory=PredictionConfig, description="Prediction block")
    coercivity: CoercivityConfig = Field(default_factory=CoercivityConfig, description="Coercivity block")

    @model_validator(mode="after")
    def _noise_needs_level(self) -> "ExperimentConfig":
        if self.learning.noise != NoiseModel.NONE and self.learning.velocity != VelocityMode.EXACT:
            raise ValueError("noisy observations are defined for observed (exact) velocities only")
        return self

    def apply_profile(self, profile: Union[Profile, str]) -> "ExperimentConfig":
        """Scaled copy for the ``ci`` profile; ``full`` returns the config unchanged."""
        if Profile(profile) == Profile.FULL:
            return self
        M = [m for m in self.learning.M if m <= 256] or self.learning.M[:1]
        return self.model_copy(
            update={
                "measure": self.measure.model_copy(update={"M_rho": min(self.measure.M_rho, 10000)}),
                "learning": self.learning.model_copy(
                    update={"M": M, "trials": min(self.learning.trials, 3)}
                ),
                "coercivity": self.coercivity.model_copy(update={"M": min(self.coercivity.M, 10000)}),
                "prediction": self.prediction.model_copy(update={"ics": min(self.prediction.ics, 4)}),
            }
        )


def load_config(path: Union[str, Path], profile: Optional[Union[Profile, str]] = None) -> ExperimentConfig:
    """Read a JSON or YAML experiment config and apply ``profile``.

    Raises:
        ConfigError: unreadable file or failed validation
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        config = ExperimentConfig.model_validate(raw)
    except (ValueError, yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    return config.apply_profile(profile) if profile is not None else config


class CellResult(BaseModel):
    """Outcome of one learning cell."""
    M: int = Field(..., description="Training trajectories")
    trial: int = Field(..., description="Trial index")
    status: CellStatus = Field(..., description="Completed or failed")
    partitions: Optional[int] = Field(None, description="Subintervals per pair")
    kernel_error: Optional[float] = Field(None, description="Aggregate relative error of the smoothed estimator")
    kernel_error_raw: Optional[float] = Field(None, description="Aggregate relative error of the raw estimator")
    error: Optional[str] = Field(None, description="Failure message")
    duration: float = Field(0.0, description="Wall time in seconds")


class BenchmarkSummary(BaseModel):
    """Manifest of one results bundle."""
    experiment: str = Field(..., description="Experiment name")
    tool: str = Field(..., description="Tool name")
    tool_version: str = Field(..., description="Tool version")
    seed: int = Field(..., description="Experiment seed")
    R: float = Field(..., description="Hypothesis interval end")
    cells: List[CellResult] = Field(default_factory=list, description="Per-cell outcomes")
    rates: Dict[str, Dict[str, float]] = Field(default_factory=dict, description="Fitted learning rates")
    files: List[str] = Field(default_factory=list, description="Bundle files")

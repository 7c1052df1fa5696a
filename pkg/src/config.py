"""Configuration management for the Interaction Kernel Learner."""

from typing import Literal
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix ``KLEARN_``)."""

    # Application Configuration
    app_name: str = Field("Interaction Kernel Learner", description="Tool name written to bundles")
    app_version: str = Field("1.0.0", description="Tool version written to bundles")
    log_level: str = Field("INFO", description="stdlib logging level for structlog output")

    # Execution
    threads: int = Field(1, ge=1, description="Worker processes for trajectory chunks")
    chunk_size: int = Field(64, ge=1, description="Trajectories per work chunk (power of two)")
    profile: Literal["ci", "full"] = Field("full", description="Experiment scale profile")
    seed: int = Field(20190101, ge=0, description="Default 64-bit experiment seed")
    out_dir: str = Field("results", description="Default output directory")

    # Integrator tolerances
    rtol: float = Field(1e-5, gt=0.0, description="Relative tolerance per component")
    atol: float = Field(1e-6, gt=0.0, description="Absolute tolerance per component")

    # Numerics
    metric_bins: int = Field(1000, ge=1, description="Histogram bins for L2(rho) metrics")
    smoothing_nodes: int = Field(2000, ge=2, description="Grid intervals for estimator smoothing")
    sv_cutoff: float = Field(1e-12, ge=0.0, description="Relative eigenvalue cutoff of the pseudo-inverse")

    model_config = SettingsConfigDict(
        env_prefix="KLEARN_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("chunk_size")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"chunk_size must be a power of two, got {value}")
        return value


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the application settings."""
    return settings

"""Initial-condition samplers (per-type laws for mu_0)."""

from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from .system import SystemSpec

SAMPLER_KINDS = (
    "uniform_interval",
    "uniform_disk",
    "uniform_annulus",
    "standard_gaussian",
    "exchangeable_gaussian",
)


@dataclass(frozen=True)
class SamplerLaw:
    """Law of the initial positions of one agent type."""

    kind: str
    lo: float = 0.0
    hi: float = 1.0
    radius: float = 1.0
    r_in: float = 0.0
    r_out: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"Unknown sampler kind '{self.kind}'. Known kinds: {SAMPLER_KINDS}")
        if self.kind == "uniform_interval" and not self.lo < self.hi:
            raise ValueError(f"uniform interval needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.kind == "uniform_disk" and self.radius <= 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")
        if self.kind == "uniform_annulus" and not 0 <= self.r_in <= self.r_out:
            raise ValueError(f"annulus needs 0 <= r_in <= r_out, got [{self.r_in}, {self.r_out}]")
        if self.kind == "exchangeable_gaussian" and self.lam <= 0:
            raise ValueError(f"exchangeable-Gaussian lambda must be positive, got {self.lam}")

    def sample(self, count: int, d: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` agent positions in R^d."""
        if self.kind == "uniform_interval":
            return rng.uniform(self.lo, self.hi, size=(count, d))
        if self.kind == "standard_gaussian":
            return rng.standard_normal(size=(count, d))
        if self.kind == "exchangeable_gaussian":
            common = rng.standard_normal(size=(1, d))
            return common + np.sqrt(self.lam) * rng.standard_normal(size=(count, d))
        # disk and annulus: uniform in volume, radius through the inverse radial CDF
        directions = rng.standard_normal(size=(count, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        u = rng.uniform(size=(count, 1))
        if self.kind == "uniform_disk":
            radii = self.radius * u ** (1.0 / d)
        else:
            inner, outer = self.r_in ** d, self.r_out ** d
            radii = (inner + u * (outer - inner)) ** (1.0 / d)
        return directions * radii

    def to_config(self) -> Dict[str, Any]:
        fields = {
            "uniform_interval": ("lo", "hi"),
            "uniform_disk": ("radius",),
            "uniform_annulus": ("r_in", "r_out"),
            "standard_gaussian": (),
            "exchangeable_gaussian": ("lam",),
        }[self.kind]
        return {"kind": self.kind, **{name: getattr(self, name) for name in fields}}


@dataclass(frozen=True)
class InitialSampler:
    """One law per agent type; types are sampled in order."""

    laws: Tuple[SamplerLaw, ...]

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))

    @classmethod
    def homogeneous(cls, law: SamplerLaw, K: int = 1) -> "InitialSampler":
        return cls(laws=(law,) * K)

    @classmethod
    def from_config(cls, entries: Sequence[Dict[str, Any]]) -> "InitialSampler":
        return cls(laws=tuple(SamplerLaw(**entry) for entry in entries))

    def to_config(self):
        return [law.to_config() for law in self.laws]


def sample_initial(sampler: InitialSampler, spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one initial state of shape (N, d)."""
    if len(sampler.laws) != spec.K:
        raise ValueError(f"sampler has {len(sampler.laws)} laws for {spec.K} agent types")
    blocks = [
        law.sample(size, spec.d, rng) for law, size in zip(sampler.laws, spec.type_sizes)
    ]
    return np.concatenate(blocks, axis=0)

"""System and trajectory containers shared by every numerical module."""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeMismatchError
from .kernels import Kernel, build_kernel


@dataclass(frozen=True)
class SystemSpec:
    """Heterogeneous first-order agent system.

    Agents are stored contiguously by type: type k owns indices
    ``offsets[k] : offsets[k] + type_sizes[k]``. ``kernels[k][k']`` is how
    type-k' agents influence type-k agents.
    """

    d: int
    type_sizes: Tuple[int, ...]
    kernels: Tuple[Tuple[Kernel, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "type_sizes", tuple(int(n) for n in self.type_sizes))
        object.__setattr__(self, "kernels", tuple(tuple(row) for row in self.kernels))
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if not self.type_sizes or any(n < 1 for n in self.type_sizes):
            raise ValueError(f"every type needs at least one agent, got {self.type_sizes}")
        K = len(self.type_sizes)
        if len(self.kernels) != K or any(len(row) != K for row in self.kernels):
            raise ValueError(f"kernel grid must be {K}x{K}")

    @property
    def K(self) -> int:
        return len(self.type_sizes)

    @property
    def N(self) -> int:
        return sum(self.type_sizes)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.type_sizes)]))

    def type_slice(self, k: int) -> slice:
        offsets = self.offsets
        return slice(offsets[k], offsets[k + 1])

    @property
    def type_of(self) -> np.ndarray:
        """Type index k_i of every agent i."""
        return np.repeat(np.arange(self.K), self.type_sizes)

    @property
    def agent_weights(self) -> np.ndarray:
        """S-norm weights 1/N_{k_i}."""
        sizes = np.asarray(self.type_sizes, dtype=float)
        return 1.0 / sizes[self.type_of]

    def pair_count(self, k: int, kp: int) -> int:
        """N_{kk'}: ordered pairs across types, unordered pairs within a type."""
        if k == kp:
            n = self.type_sizes[k]
            return n * (n - 1) // 2
        return self.type_sizes[k] * self.type_sizes[kp]

    def with_type_sizes(self, type_sizes: Sequence[int]) -> "SystemSpec":
        """Same kernels and dimension with a different type partition."""
        return SystemSpec(d=self.d, type_sizes=tuple(type_sizes), kernels=self.kernels)

    def with_kernels(self, kernels: Sequence[Sequence[Kernel]]) -> "SystemSpec":
        return SystemSpec(d=self.d, type_sizes=self.type_sizes, kernels=tuple(tuple(r) for r in kernels))

    def check_kernels(self, r_max: float, nodes: int = 10001) -> None:
        """Raise if any kernel is non-finite on [0, r_max]."""
        grid = np.linspace(0.0, r_max, nodes)
        for k in range(self.K):
            for kp in range(self.K):
                if not np.all(np.isfinite(self.kernels[k][kp](grid))):
                    raise ValueError(f"kernel ({k},{kp}) is not finite on [0, {r_max}]")

    def as_state(self, state: Any) -> np.ndarray:
        """View a flat or (N, d) array as (N, d), checking its size."""
        arr = np.asarray(state, dtype=float)
        if arr.size != self.N * self.d:
            raise ShapeMismatchError(f"state has {arr.size} entries, expected N*d = {self.N * self.d}")
        return arr.reshape(self.N, self.d)

    def to_config(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "type_sizes": list(self.type_sizes),
            "kernels": [[kernel.to_config() for kernel in row] for row in self.kernels],
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "SystemSpec":
        kernels = [
            [build_kernel(entry["name"], entry.get("params")) for entry in row]
            for row in config["kernels"]
        ]
        return cls(d=int(config["d"]), type_sizes=tuple(config["type_sizes"]), kernels=kernels)


@dataclass
class TrajectoryBatch:
    """M trajectories sampled at L common times.

    ``states`` and ``velocities`` have shape (M, L, N, d).
    """

    times: np.ndarray
    states: np.ndarray
    velocities: Optional[np.ndarray] = None
    seed: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 4:
            raise ShapeMismatchError(f"states must have shape (M, L, N, d), got {self.states.shape}")
        if self.times.shape != (self.states.shape[1],):
            raise ShapeMismatchError(
                f"{self.times.size} times for {self.states.shape[1]} sampled states"
            )
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
            if self.velocities.shape != self.states.shape:
                raise ShapeMismatchError(
                    f"velocities shape {self.velocities.shape} != states shape {self.states.shape}"
                )

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def L(self) -> int:
        return self.states.shape[1]

    @property
    def has_velocities(self) -> bool:
        return self.velocities is not None

    def head(self, M: int) -> "TrajectoryBatch":
        """First M trajectories (batches are prefix-nested by construction)."""
        return TrajectoryBatch(
            times=self.times,
            states=self.states[:M],
            velocities=None if self.velocities is None else self.velocities[:M],
            seed=self.seed,
            metadata=dict(self.metadata),
        )

    def is_equispaced(self, rtol: float = 1e-12) -> bool:
        if self.times.size < 3:
            return True
        steps = np.diff(self.times)
        return bool(np.all(np.abs(steps - steps[0]) <= rtol * abs(steps[0])))


def equispaced_times(t_start: float, t_end: float, count: int) -> np.ndarray:
    """``count`` equispaced instants on [t_start, t_end]."""
    if count < 1:
        raise ValueError("need at least one time point")
    if count == 1:
        return np.array([float(t_start)])
    return np.linspace(float(t_start), float(t_end), count)


def extended_times(t_start: float, t_end: float, count: int) -> np.ndarray:
    """``count`` equispaced instants on [t_start, t_end] plus one more step beyond t_end."""
    times = equispaced_times(t_start, t_end, count)
    step = times[1] - times[0] if count > 1 else 1.0
    return np.append(times, times[-1] + step)

"""Piecewise-polynomial hypothesis spaces, estimators and estimator smoothing."""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import get_settings
from .errors import HypothesisSpaceError
from .kernels import Kernel, TabulatedKernel
from .measure import pair_distances
from .system import SystemSpec


def choose_dimension(M: int, s: float, c: float) -> int:
    """Partition count round(c * (M / ln M)^(1/(2s+1))), at least 1."""
    if M < 2:
        raise ValueError(f"dimension rule needs M >= 2 (log M > 0), got {M}")
    if c <= 0:
        raise ValueError(f"multiplier must be positive, got {c}")
    value = c * (M / math.log(M)) ** (1.0 / (2.0 * s + 1.0))
    return max(1, int(math.floor(value + 0.5)))


@dataclass(frozen=True)
class HypothesisSpace:
    """Per-pair piecewise polynomials of degree 0 or 1 on uniform partitions.

    Pair (k, k') owns ``pair_dim = (degree + 1) * partitions`` basis functions
    on its interval; stacked indices follow the lexicographic order of (k, k')
    then the local index p = j * (degree + 1) + q, with j the subinterval and
    q the local function (1, or the normalized offset (r - r_j) / h).
    """

    K: int
    degree: int
    partitions: int
    intervals: Tuple[Tuple[Tuple[float, float], ...], ...]

    def __post_init__(self):
        if self.degree not in (0, 1):
            raise HypothesisSpaceError(f"degree must be 0 or 1, got {self.degree}")
        if self.partitions < 1:
            raise HypothesisSpaceError(f"need at least one subinterval, got {self.partitions}")
        intervals = tuple(tuple((float(lo), float(hi)) for lo, hi in row) for row in self.intervals)
        if len(intervals) != self.K or any(len(row) != self.K for row in intervals):
            raise HypothesisSpaceError(f"interval grid must be {self.K}x{self.K}")
        for row in intervals:
            for lo, hi in row:
                if not 0.0 <= lo < hi:
                    raise HypothesisSpaceError(f"invalid interval [{lo}, {hi}]")
        object.__setattr__(self, "intervals", intervals)

    @classmethod
    def uniform(cls, K: int, R: float, degree: int, partitions: int) -> "HypothesisSpace":
        """Every pair on [0, R]."""
        return cls(K=K, degree=degree, partitions=partitions, intervals=tuple(((0.0, R),) * K for _ in range(K)))

    @property
    def per_piece(self) -> int:
        return self.degree + 1

    @property
    def pair_dim(self) -> int:
        return self.per_piece * self.partitions

    @property
    def n(self) -> int:
        return self.K * self.K * self.pair_dim

    def offset(self, k: int, kp: int) -> int:
        """n~_{kk'}: number of basis functions of all pairs preceding (k, k')."""
        return (k * self.K + kp) * self.pair_dim

    def pair_indices(self, k: int, kp: int) -> slice:
        start = self.offset(k, kp)
        return slice(start, start + self.pair_dim)

    def to_stacked(self, k: int, kp: int, p: int) -> int:
        self._check_local(p)
        return self.offset(k, kp) + p

    def from_stacked(self, j: int) -> Tuple[int, int, int]:
        if not 0 <= j < self.n:
            raise HypothesisSpaceError(f"stacked index {j} out of range [0, {self.n})")
        pair, p = divmod(j, self.pair_dim)
        k, kp = divmod(pair, self.K)
        return k, kp, p

    def _check_local(self, p: int) -> None:
        if not 0 <= p < self.pair_dim:
            raise HypothesisSpaceError(f"local index {p} out of range [0, {self.pair_dim})")

    def breakpoints(self, k: int, kp: int) -> np.ndarray:
        lo, hi = self.intervals[k][kp]
        return np.linspace(lo, hi, self.partitions + 1)

    def locate(self, k: int, kp: int, r: Any, overflow: str = "error") -> Tuple[np.ndarray, np.ndarray]:
        """Subinterval index j and normalized offset t in [0, 1] of each distance.

        Subintervals are left-closed; the last one also contains the right end.
        ``overflow="clamp"`` maps distances outside the interval to its nearest end.

        Raises:
            HypothesisSpaceError: distance outside the interval with ``overflow="error"``
        """
        lo, hi = self.intervals[k][kp]
        r = np.asarray(r, dtype=float)
        outside = (r < lo) | (r > hi)
        if np.any(outside):
            if overflow != "clamp":
                worst = float(r[outside].max() if np.any(r > hi) else r[outside].min())
                raise HypothesisSpaceError(
                    f"distance {worst} outside hypothesis interval [{lo}, {hi}] for pair ({k},{kp})"
                )
            r = np.clip(r, lo, hi)
        h = (hi - lo) / self.partitions
        j = np.minimum(np.floor((r - lo) / h).astype(np.int64), self.partitions - 1)
        t = (r - (lo + j * h)) / h
        return j, t

    def basis_values(self, k: int, kp: int, r: Any) -> np.ndarray:
        """Dense (len(r), pair_dim) matrix of every local basis function; zero outside the interval."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        lo, hi = self.intervals[k][kp]
        inside = (r >= lo) & (r <= hi)
        j, t = self.locate(k, kp, r, overflow="clamp")
        values = np.zeros((r.size, self.pair_dim))
        rows = np.nonzero(inside)[0]
        values[rows, j[rows] * self.per_piece] = 1.0
        if self.degree == 1:
            values[rows, j[rows] * self.per_piece + 1] = t[rows]
        return values

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "degree": self.degree,
            "partitions": self.partitions,
            "intervals": [[list(iv) for iv in row] for row in self.intervals],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HypothesisSpace":
        return cls(
            K=int(data["K"]),
            degree=int(data["degree"]),
            partitions=int(data["partitions"]),
            intervals=tuple(tuple(tuple(iv) for iv in row) for row in data["intervals"]),
        )


def eval_basis(space: HypothesisSpace, pair: Tuple[int, int], p: int, r: Any) -> Any:
    """Value of basis function p of pair (k, k') at r."""
    k, kp = pair
    space._check_local(p)
    arr = np.asarray(r, dtype=float)
    values = space.basis_values(k, kp, arr.ravel())[:, p].reshape(arr.shape)
    return float(values) if arr.ndim == 0 else values


def support_intervals(
    spec: SystemSpec, states: np.ndarray, R: float
) -> Tuple[Tuple[Tuple[float, float], ...], ...]:
    """Per-pair [min, max] observed distance, clipped to [0, R]; [0, R] for pairs never observed."""
    rows: List[Tuple[Tuple[float, float], ...]] = []
    for k in range(spec.K):
        row = []
        for kp in range(spec.K):
            distances = pair_distances(spec, states, k, kp) if not (k == kp and spec.type_sizes[k] < 2) else np.empty(0)
            if distances.size == 0 or distances.max() <= distances.min():
                row.append((0.0, R))
            else:
                row.append((max(0.0, float(distances.min())), min(R, float(distances.max()))))
        rows.append(tuple(row))
    return tuple(rows)


class PiecewisePolynomialKernel(Kernel):
    """Raw estimator of one pair; zero outside the hypothesis interval."""

    name = "piecewise"

    def __init__(self, space: HypothesisSpace, k: int, kp: int, coeffs: np.ndarray):
        self.space = space
        self.k = k
        self.kp = kp
        self.coeffs = np.asarray(coeffs, dtype=float)

    def _evaluate(self, r: np.ndarray) -> np.ndarray:
        lo, hi = self.space.intervals[self.k][self.kp]
        j, t = self.space.locate(self.k, self.kp, r, overflow="clamp")
        step = self.space.per_piece
        values = self.coeffs[j * step]
        if self.space.degree == 1:
            values = values + self.coeffs[j * step + 1] * t
        return np.where((r >= lo) & (r <= hi), values, 0.0)

    def params(self) -> Dict[str, Any]:
        return {
            "interval": list(self.space.intervals[self.k][self.kp]),
            "degree": self.space.degree,
            "coeffs": self.coeffs.tolist(),
        }


@dataclass
class Estimator:
    """Stacked coefficients over a hypothesis space, plus an optional smoothed form."""

    space: HypothesisSpace
    coeffs: np.ndarray
    smoothed: Optional[List[List[TabulatedKernel]]] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n,):
            raise HypothesisSpaceError(
                f"coefficient vector has shape {self.coeffs.shape}, expected ({self.space.n},)"
            )

    def kernel(self, k: int, kp: int) -> PiecewisePolynomialKernel:
        return PiecewisePolynomialKernel(self.space, k, kp, self.coeffs[self.space.pair_indices(k, kp)])

    def kernels(self) -> List[List[Kernel]]:
        """Raw piecewise-polynomial kernels as a K x K grid."""
        return [[self.kernel(k, kp) for kp in range(self.space.K)] for k in range(self.space.K)]

    def smoothed_kernels(self) -> List[List[Kernel]]:
        if self.smoothed is None:
            raise ValueError("estimator has not been smoothed")
        return self.smoothed


def smooth_estimator(est: Estimator, grid_step: Optional[float] = None) -> Estimator:
    """Piecewise-linear interpolation of the raw estimator on a fine grid, constant outside.

    The default grid has ``settings.smoothing_nodes`` intervals per pair interval.
    """
    if grid_step is not None and grid_step <= 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    space = est.space
    smoothed = []
    for k in range(space.K):
        row = []
        for kp in range(space.K):
            lo, hi = space.intervals[k][kp]
            if grid_step is None:
                nodes = get_settings().smoothing_nodes
            else:
                nodes = max(1, int(math.ceil((hi - lo) / grid_step)))
            grid = np.linspace(lo, hi, nodes + 1)
            row.append(TabulatedKernel(grid, est.kernel(k, kp)(grid)))
        smoothed.append(row)
    return Estimator(space=space, coeffs=est.coeffs, smoothed=smoothed, diagnostics=dict(est.diagnostics))


def mean_estimator(estimators: Sequence[Estimator]) -> Estimator:
    """Coefficient-wise mean over trials sharing one hypothesis space (plot overlays only)."""
    space = estimators[0].space
    if any(e.space != space for e in estimators):
        raise HypothesisSpaceError("cannot average estimators over different hypothesis spaces")
    return Estimator(space=space, coeffs=np.mean([e.coeffs for e in estimators], axis=0))

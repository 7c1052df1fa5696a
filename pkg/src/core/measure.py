"""Empirical pairwise-distance measures and the weighted L2 metrics built on them."""

import functools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import structlog

from ..config import get_settings
from .errors import MeasureError
from .parallel import chunk_ranges, map_reduce
from .system import SystemSpec, TrajectoryBatch

logger = structlog.get_logger()


def pair_distances(spec: SystemSpec, states: np.ndarray, k: int, kp: int) -> np.ndarray:
    """All (k, k') pairwise distances in ``states`` (..., N, d), flattened.

    Within a type each unordered pair appears once; across types every ordered
    pair (i in C_k, i' in C_k') appears once.
    """
    rows = states[..., spec.type_slice(k), None, :]
    cols = states[..., None, spec.type_slice(kp), :]
    r = np.sqrt(np.sum((cols - rows) ** 2, axis=-1))
    if k == kp:
        upper = np.triu_indices(spec.type_sizes[k], k=1)
        return r[..., upper[0], upper[1]].ravel()
    return r.ravel()


def max_pairwise_distance(states: np.ndarray) -> float:
    """R_max over every agent pair, time and trajectory in ``states`` (..., N, d)."""
    if states.shape[-2] < 2:
        return 0.0
    diff = states[..., None, :, :] - states[..., :, None, :]
    return float(np.sqrt(np.max(np.sum(diff ** 2, axis=-1))))


@dataclass(frozen=True)
class PairHistogram:
    """One (k, k') histogram: bin midpoints and masses."""

    midpoints: np.ndarray
    masses: np.ndarray


@dataclass
class PairwiseMeasure:
    """Per-(k, k') histograms of pairwise distances on a uniform grid over [0, R].

    ``counts`` has shape (K, K, B). Masses are counts normalized per pair over the
    samples that fall in [0, R]: without overflow every sample weighs
    1 / (L * M * N_kk'), and samples beyond R (counted in ``overflow``) are
    dropped, so each remaining sample weighs 1 / (L * M * N_kk' - overflow).
    """

    R: float
    edges: np.ndarray
    counts: np.ndarray
    defined: np.ndarray
    overflow: np.ndarray

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def bins(self) -> int:
        return self.edges.size - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def masses(self) -> np.ndarray:
        totals = self.counts.sum(axis=-1, keepdims=True)
        masses = np.zeros(self.counts.shape, dtype=float)
        np.divide(self.counts, totals, out=masses, where=totals > 0)
        return masses

    def pair(self, k: int, kp: int) -> PairHistogram:
        if not self.defined[k, kp]:
            raise MeasureError(f"measure for pair ({k},{kp}) is undefined (type has fewer than 2 agents)")
        return PairHistogram(midpoints=self.midpoints, masses=self.masses[k, kp])

    def merge(self, other: "PairwiseMeasure") -> "PairwiseMeasure":
        """Add integer counts; associative and commutative."""
        if not np.array_equal(self.edges, other.edges):
            raise MeasureError("cannot merge measures with different bin edges")
        return PairwiseMeasure(
            R=self.R,
            edges=self.edges,
            counts=self.counts + other.counts,
            defined=self.defined & other.defined,
            overflow=self.overflow + other.overflow,
        )

    def total_variation(self, other: "PairwiseMeasure") -> np.ndarray:
        """Per-pair total-variation distance between two measures on the same bins."""
        return 0.5 * np.abs(self.masses - other.masses).sum(axis=-1)


def uniform_edges(R: float, bins: int) -> np.ndarray:
    if R <= 0:
        raise MeasureError(f"support radius must be positive, got {R}")
    if bins < 1:
        raise MeasureError(f"need at least one bin, got {bins}")
    return np.linspace(0.0, float(R), bins + 1)


def measure_from_states(spec: SystemSpec, states: np.ndarray, edges: np.ndarray) -> PairwiseMeasure:
    """Histogram counts of the pairwise distances in ``states`` (M, L, N, d)."""
    K = spec.K
    counts = np.zeros((K, K, edges.size - 1), dtype=np.int64)
    overflow = np.zeros((K, K), dtype=np.int64)
    defined = np.ones((K, K), dtype=bool)
    for k in range(K):
        for kp in range(K):
            if k == kp and spec.type_sizes[k] < 2:
                defined[k, kp] = False
                continue
            distances = pair_distances(spec, states, k, kp)
            counts[k, kp], _ = np.histogram(distances, bins=edges)
            overflow[k, kp] = int(np.count_nonzero(distances > edges[-1]))
    return PairwiseMeasure(R=float(edges[-1]), edges=edges, counts=counts, defined=defined, overflow=overflow)


def _merge(left: PairwiseMeasure, right: PairwiseMeasure) -> PairwiseMeasure:
    return left.merge(right)


def build_measure(
    traj: TrajectoryBatch,
    spec: SystemSpec,
    bins: Optional[int] = None,
    R: Optional[float] = None,
    threads: int = 1,
) -> PairwiseMeasure:
    """Empirical measures rho^{L,M,kk'} of the batch on [0, R].

    When ``R`` is omitted it is the largest observed pairwise distance. Diagonal
    pairs of single-agent types are flagged undefined and left empty.
    """
    if traj.M < 1 or traj.L < 1:
        raise MeasureError("need at least one trajectory and one time point")
    settings = get_settings()
    bins = settings.metric_bins if bins is None else bins
    if R is None:
        R = max_pairwise_distance(traj.states)
    edges = uniform_edges(R, bins)
    chunks = [(traj.states[start:stop], edges) for start, stop in chunk_ranges(traj.M, settings.chunk_size)]
    measure = map_reduce(functools.partial(measure_from_states, spec), _merge, chunks, threads)
    report_overflow(measure)
    return measure


def report_overflow(measure: PairwiseMeasure) -> None:
    if measure.overflow.any():
        logger.warning(
            "Pairwise distances beyond measure support",
            R=measure.R,
            overflow=measure.overflow.tolist(),
        )


def weighted_l2_norm(g: Callable, mu: PairHistogram) -> float:
    """||g(.) .||_{L2(mu)} = (sum_b mass_b * (g(c_b) * c_b)^2)^(1/2), c_b the bin midpoint."""
    values = np.asarray(g(mu.midpoints), dtype=float)
    if not np.all(np.isfinite(values[mu.masses > 0])):
        raise ValueError("function is not finite on the support of the measure")
    values = np.where(mu.masses > 0, values, 0.0)
    return float(np.sqrt(np.sum(mu.masses * (values * mu.midpoints) ** 2)))


@dataclass(frozen=True)
class KernelErrorReport:
    """Relative L2(rho) kernel errors.

    ``per_pair[k, k']`` is relative, except where ``absolute[k, k']`` is set
    (zero-norm truth, e.g. phi_22 == 0) in which case it is the absolute error.
    Undefined pairs hold NaN.
    """

    per_pair: np.ndarray
    absolute: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    aggregate: float


def relative_kernel_error(
    est: Sequence[Sequence[Callable]],
    truth: Sequence[Sequence[Callable]],
    mu: PairwiseMeasure,
) -> KernelErrorReport:
    """Per-pair and stacked relative errors ||(est - truth)(.) .|| / ||truth(.) .||."""
    K = mu.K
    numerators = np.full((K, K), np.nan)
    denominators = np.full((K, K), np.nan)
    for k in range(K):
        for kp in range(K):
            if not mu.defined[k, kp]:
                continue
            hist = mu.pair(k, kp)
            phi_hat, phi = est[k][kp], truth[k][kp]
            numerators[k, kp] = weighted_l2_norm(lambda r: phi_hat(r) - phi(r), hist)
            denominators[k, kp] = weighted_l2_norm(phi, hist)
    absolute = mu.defined & (denominators == 0)
    per_pair = np.full((K, K), np.nan)
    relative = mu.defined & ~absolute
    per_pair[relative] = numerators[relative] / denominators[relative]
    per_pair[absolute] = numerators[absolute]
    top = float(np.sqrt(np.nansum(numerators ** 2)))
    bottom = float(np.sqrt(np.nansum(denominators ** 2)))
    aggregate = top / bottom if bottom > 0 else top
    return KernelErrorReport(
        per_pair=per_pair,
        absolute=absolute,
        numerators=numerators,
        denominators=denominators,
        aggregate=aggregate,
    )


def support_bound(C0: float, K: int, sup_phi: float, R: float, T: float) -> float:
    """Radius 2*C0 + 2*K*||phi||_inf*R*T containing every pairwise distance up to time T
    when mu_0 is supported in the ball of radius C0."""
    return 2.0 * C0 + 2.0 * K * sup_phi * R * T

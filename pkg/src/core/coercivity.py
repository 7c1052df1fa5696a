"""Coercivity-constant estimation over orthonormalized hypothesis spaces."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy import linalg

from .errors import MeasureError
from .hypothesis import HypothesisSpace
from .measure import PairwiseMeasure
from .regression import NormalSystem, assemble_batch
from .system import SystemSpec, TrajectoryBatch

logger = structlog.get_logger()

PRUNE_TOLERANCE = 1e-10


def modified_gram_schmidt(
    columns: np.ndarray, tolerance: float = PRUNE_TOLERANCE
) -> Tuple[np.ndarray, List[int]]:
    """Orthonormalize the columns of ``columns`` in the Euclidean inner product.

    Returns ``(T, kept)``: ``columns @ T`` has orthonormal columns, one per index
    in ``kept``. Columns whose residual norm falls below ``tolerance`` times the
    largest column norm are dropped. Every projection is applied twice; only
    previously accepted vectors sharing support with the current one are visited.
    """
    n_rows, n_cols = columns.shape
    norms = np.linalg.norm(columns, axis=0)
    floor = tolerance * (norms.max() if n_cols else 0.0)
    Q = np.zeros((n_rows, n_cols))
    T = np.zeros((n_cols, n_cols))
    kept: List[int] = []
    for p in range(n_cols):
        v = columns[:, p].copy()
        coords = np.zeros(n_cols)
        coords[p] = 1.0
        support = np.nonzero(v)[0]
        accepted = len(kept)
        overlapping = np.nonzero(np.any(Q[support, :accepted] != 0.0, axis=0))[0]
        for _ in range(2):
            for j in overlapping:
                projection = Q[:, j] @ v
                v -= projection * Q[:, j]
                coords -= projection * T[:, j]
        norm = np.linalg.norm(v)
        if norm == 0.0 or norm <= floor:
            continue
        Q[:, accepted] = v / norm
        T[:, accepted] = coords / norm
        kept.append(p)
    return T[:, : len(kept)], kept


@dataclass
class OrthonormalizedBasis:
    """Block-diagonal change of basis making every pair's functions psi(.)*. orthonormal.

    ``transform`` maps retained coordinates to stacked coordinates of ``space``;
    ``columns`` lists, per retained function, its pair and original local index.
    """

    space: HypothesisSpace
    transform: np.ndarray
    columns: List[Tuple[int, int, int]]
    gram_residual: float
    pruned: List[Tuple[int, int, int]] = field(default_factory=list)
    excluded_pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def retained(self) -> int:
        return self.transform.shape[1]


def _weighted_columns(space: HypothesisSpace, mu: PairwiseMeasure, k: int, kp: int) -> np.ndarray:
    hist = mu.pair(k, kp)
    values = space.basis_values(k, kp, hist.midpoints)
    return values * (hist.midpoints * np.sqrt(hist.masses))[:, None]


def orthonormalize(space: HypothesisSpace, mu: PairwiseMeasure) -> OrthonormalizedBasis:
    """Per-pair modified Gram-Schmidt in <f(.)., g(.).>_{L2(rho^{kk'})} (bin-midpoint quadrature).

    Pairs whose measure is undefined (single-agent types) are excluded.

    Raises:
        MeasureError: a defined pair whose measure carries no mass
    """
    if mu.K != space.K:
        raise MeasureError(f"measure has {mu.K} types, hypothesis space has {space.K}")
    blocks, columns, pruned, excluded = [], [], [], []
    residual = 0.0
    for k in range(space.K):
        for kp in range(space.K):
            if not mu.defined[k, kp]:
                excluded.append((k, kp))
                continue
            if mu.counts[k, kp].sum() == 0:
                raise MeasureError(f"measure for pair ({k},{kp}) has no mass on [0, {mu.R}]")
            weighted = _weighted_columns(space, mu, k, kp)
            T, kept = modified_gram_schmidt(weighted)
            pruned.extend((k, kp, p) for p in range(space.pair_dim) if p not in kept)
            full = np.zeros((space.n, T.shape[1]))
            full[space.pair_indices(k, kp)] = T
            blocks.append(full)
            columns.extend((k, kp, p) for p in kept)
            gram = (weighted @ T).T @ (weighted @ T)
            if gram.size:
                residual = max(residual, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
    transform = np.hstack(blocks) if blocks else np.zeros((space.n, 0))
    if pruned:
        logger.warning("Basis functions pruned", count=len(pruned), partitions=space.partitions)
    return OrthonormalizedBasis(
        space=space,
        transform=transform,
        columns=columns,
        gram_residual=residual,
        pruned=pruned,
        excluded_pairs=excluded,
    )


@dataclass
class CoercivityEstimate:
    """Smallest eigenvalue of the bilinear-form matrix in an orthonormal basis."""

    partitions: int
    lambda_min: float
    lambda_max: float
    block_lambda_min: Dict[int, float]
    gram_residual: float
    retained: int
    pruned: List[Tuple[int, int, int]]
    excluded_pairs: List[Tuple[int, int]]

    @property
    def is_pruned(self) -> bool:
        return bool(self.pruned)

    def to_dict(self) -> Dict:
        return {
            "partitions": self.partitions,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "block_lambda_min": {str(k): v for k, v in self.block_lambda_min.items()},
            "gram_residual": self.gram_residual,
            "retained": self.retained,
            "pruned": [list(entry) for entry in self.pruned],
            "excluded_pairs": [list(entry) for entry in self.excluded_pairs],
        }


def coercivity_from_system(ns: NormalSystem, basis: OrthonormalizedBasis) -> CoercivityEstimate:
    """Eigenvalues of T^T G T overall and per velocity block (pairs (k, .))."""
    G = ns.G
    G_tilde = basis.transform.T @ G @ basis.transform
    G_tilde = 0.5 * (G_tilde + G_tilde.T)
    eigenvalues = linalg.eigvalsh(G_tilde) if G_tilde.size else np.zeros(1)
    block_lambda_min: Dict[int, float] = {}
    owners = np.array([k for k, _, _ in basis.columns], dtype=int)
    for k in range(basis.space.K):
        index = np.nonzero(owners == k)[0]
        if index.size:
            block_lambda_min[k] = float(linalg.eigvalsh(G_tilde[np.ix_(index, index)])[0])
    estimate = CoercivityEstimate(
        partitions=basis.space.partitions,
        lambda_min=float(eigenvalues[0]),
        lambda_max=float(eigenvalues[-1]),
        block_lambda_min=block_lambda_min,
        gram_residual=basis.gram_residual,
        retained=basis.retained,
        pruned=list(basis.pruned),
        excluded_pairs=list(basis.excluded_pairs),
    )
    logger.info(
        "Coercivity estimated",
        partitions=estimate.partitions,
        lambda_min=estimate.lambda_min,
        blocks=block_lambda_min,
        gram_residual=estimate.gram_residual,
        pruned=len(estimate.pruned),
    )
    return estimate


def estimate_coercivity(
    spec: SystemSpec,
    space: HypothesisSpace,
    mu: PairwiseMeasure,
    batch: TrajectoryBatch,
    threads: int = 1,
    overflow: str = "clamp",
    ns: Optional[NormalSystem] = None,
) -> CoercivityEstimate:
    """Coercivity constant of ``space`` on the dynamics of ``batch``.

    The regression matrix only needs states, so the batch may lack velocities.
    A precomputed normal system over the same space can be passed in ``ns``.
    """
    basis = orthonormalize(space, mu)
    if ns is None:
        ns = assemble_batch(spec, space, batch, threads=threads, overflow=overflow, require_velocities=False)
    return coercivity_from_system(ns, basis)

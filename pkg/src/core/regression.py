"""Learning matrices, normal equations and the empirical error functional."""

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import linalg, sparse

from ..config import get_settings
from .dynamics import batch_rhs, snorm_squared
from .errors import SolverError
from .hypothesis import Estimator, HypothesisSpace
from .kernels import Kernel
from .parallel import chunk_ranges, map_reduce
from .system import SystemSpec, TrajectoryBatch

logger = structlog.get_logger()

_Part = Tuple[np.ndarray, np.ndarray, float]


def learning_matrix(
    spec: SystemSpec,
    space: HypothesisSpace,
    states: np.ndarray,
    velocities: Optional[np.ndarray] = None,
    overflow: str = "error",
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Sparse learning matrix Psi (L*N*d, n) and stacked target d of one trajectory.

    Row (l, i, c) of Psi holds, in column (k_i, k', p),
    sqrt(1/N_{k_i}) / N_{k'} * sum_{i' in C_k'} psi_{k_i k', p}(r_ii'(t_l)) (x_i' - x_i)_c;
    d stacks sqrt(1/N_{k_i}) * xdot_i(t_l). Without velocities d is zero.
    """
    L = states.shape[0]
    N, d = spec.N, spec.d
    if states.shape != (L, N, d):
        raise SolverError(f"trajectory has shape {states.shape}, expected (L, {N}, {d})")
    if space.K != spec.K:
        raise SolverError(f"hypothesis space has {space.K} types, system has {spec.K}")
    diff = states[:, None, :, :] - states[:, :, None, :]
    r = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    root_weights = np.sqrt(spec.agent_weights)

    rows, cols, data = [], [], []
    for k in range(spec.K):
        agents = np.arange(spec.N)[spec.type_slice(k)]
        for kp in range(spec.K):
            others = np.arange(spec.N)[spec.type_slice(kp)]
            ii, jj = np.meshgrid(agents, others, indexing="ij")
            keep = ii != jj
            ii, jj = ii[keep], jj[keep]
            if ii.size == 0:
                continue
            ll = np.repeat(np.arange(L), ii.size)
            ii_all = np.tile(ii, L)
            jj_all = np.tile(jj, L)
            pair_r = r[ll, ii_all, jj_all]
            pair_diff = diff[ll, ii_all, jj_all]
            piece, t = space.locate(k, kp, pair_r, overflow=overflow)
            scale = root_weights[ii_all] / spec.type_sizes[kp]
            locals_ = [np.ones_like(t)] if space.degree == 0 else [np.ones_like(t), t]
            for q, value in enumerate(locals_):
                column = space.offset(k, kp) + piece * space.per_piece + q
                for c in range(d):
                    rows.append((ll * N + ii_all) * d + c)
                    cols.append(column)
                    data.append(scale * value * pair_diff[:, c])

    shape = (L * N * d, space.n)
    if rows:
        psi = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        ).tocsr()
    else:
        psi = sparse.csr_matrix(shape)
    if velocities is None:
        target = np.zeros(L * N * d)
    else:
        target = (velocities * root_weights[None, :, None]).ravel()
    return psi, target


def assemble_trajectory(
    spec: SystemSpec,
    space: HypothesisSpace,
    states: np.ndarray,
    velocities: Optional[np.ndarray] = None,
    overflow: str = "error",
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-trajectory normal block A^(m) = Psi^T Psi / (L N) and b^(m) = Psi^T d / (L N)."""
    total_A, total_b, _ = _trajectory_totals(spec, space, states, velocities, overflow)
    scale = 1.0 / (states.shape[0] * spec.N)
    return total_A * scale, total_b * scale


def _trajectory_totals(
    spec: SystemSpec,
    space: HypothesisSpace,
    states: np.ndarray,
    velocities: Optional[np.ndarray],
    overflow: str,
) -> _Part:
    psi, target = learning_matrix(spec, space, states, velocities, overflow)
    gram = (psi.T @ psi).toarray()
    gram = 0.5 * (gram + gram.T)
    return gram, psi.T @ target, float(target @ target)


def _add_parts(left: _Part, right: _Part) -> _Part:
    return left[0] + right[0], left[1] + right[1], left[2] + right[2]


class NormalSystem:
    """Accumulated normal equations of a set of trajectories.

    Raw totals are kept per aligned power-of-two block of trajectory indices:
    block (h, j) holds the sum over trajectories j*2^h .. (j+1)*2^h - 1, always
    formed as left child + right child. The stored blocks therefore depend only
    on which trajectories were absorbed, so merging is exact and independent of
    the order and grouping of the partial systems.
    """

    def __init__(self, n: int, L: int, N: int):
        self.n = int(n)
        self.L = int(L)
        self.N = int(N)
        self.parts: Dict[Tuple[int, int], _Part] = {}
        self.m_count = 0

    def _insert(self, level: int, index: int, part: _Part) -> None:
        while (level, index ^ 1) in self.parts:
            sibling = self.parts.pop((level, index ^ 1))
            part = _add_parts(part, sibling) if index % 2 == 0 else _add_parts(sibling, part)
            level, index = level + 1, index >> 1
        if (level, index) in self.parts:
            raise SolverError(f"trajectory block ({level}, {index}) absorbed twice")
        self.parts[(level, index)] = part

    def add(self, m: int, A_total: np.ndarray, b_total: np.ndarray, dd: float = 0.0) -> None:
        """Absorb raw totals Psi^T Psi, Psi^T d, d^T d of trajectory m."""
        A_total = np.asarray(A_total, dtype=float)
        b_total = np.asarray(b_total, dtype=float)
        if A_total.shape != (self.n, self.n) or b_total.shape != (self.n,):
            raise SolverError(
                f"block of shape {A_total.shape}/{b_total.shape} does not match n = {self.n}"
            )
        self._insert(0, int(m), (A_total, b_total, float(dd)))
        self.m_count += 1

    def merge(self, other: "NormalSystem") -> "NormalSystem":
        """Union of two systems over disjoint trajectory sets."""
        if (self.n, self.L, self.N) != (other.n, other.L, other.N):
            raise SolverError(
                f"cannot merge systems with (n, L, N) = {(self.n, self.L, self.N)} "
                f"and {(other.n, other.L, other.N)}"
            )
        merged = NormalSystem(self.n, self.L, self.N)
        for key in sorted(self.parts):
            merged._insert(*key, self.parts[key])
        for key in sorted(other.parts):
            merged._insert(*key, other.parts[key])
        merged.m_count = self.m_count + other.m_count
        return merged

    def _totals(self) -> _Part:
        if self.m_count == 0:
            raise SolverError("normal system is empty")
        ordered = sorted(self.parts, key=lambda key: (key[1] << key[0], key[0]))
        total = self.parts[ordered[0]]
        for key in ordered[1:]:
            total = _add_parts(total, self.parts[key])
        return total

    @property
    def scale(self) -> float:
        return 1.0 / (self.m_count * self.L * self.N)

    @property
    def A(self) -> np.ndarray:
        """Mean of the per-trajectory blocks A^(m)."""
        return self._totals()[0] * self.scale

    def normal_equations(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) from a single merge of the stored blocks."""
        A_total, b_total, _ = self._totals()
        return A_total * self.scale, b_total * self.scale

    @property
    def b(self) -> np.ndarray:
        return self._totals()[1] * self.scale

    @property
    def G(self) -> np.ndarray:
        """Bilinear-form matrix N * A; E_M(a) = a^T G a - 2 a^T (N b) + const."""
        return self._totals()[0] / (self.m_count * self.L)

    def energy(self, coeffs: np.ndarray) -> float:
        """Empirical error E_M of the coefficient vector ``coeffs`` from the quadratic form."""
        A_total, b_total, dd = self._totals()
        a = np.asarray(coeffs, dtype=float)
        return float((a @ A_total @ a - 2.0 * a @ b_total + dd) / (self.m_count * self.L))

    def save(self, path: Union[str, Path]) -> None:
        """Checkpoint raw totals to ``.npz``."""
        keys = sorted(self.parts)
        np.savez(
            path,
            n=self.n,
            L=self.L,
            N=self.N,
            m_count=self.m_count,
            keys=np.array(keys, dtype=np.int64).reshape(-1, 2),
            A_parts=np.array([self.parts[k][0] for k in keys]).reshape(-1, self.n, self.n),
            b_parts=np.array([self.parts[k][1] for k in keys]).reshape(-1, self.n),
            dd_parts=np.array([self.parts[k][2] for k in keys], dtype=float),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NormalSystem":
        with np.load(path) as data:
            system = cls(int(data["n"]), int(data["L"]), int(data["N"]))
            for (level, index), A_part, b_part, dd in zip(
                data["keys"], data["A_parts"], data["b_parts"], data["dd_parts"]
            ):
                system.parts[(int(level), int(index))] = (A_part, b_part, float(dd))
            system.m_count = int(data["m_count"])
        return system


def accumulate(
    systems: Sequence[Tuple[np.ndarray, np.ndarray]], L: int = 1, N: int = 1
) -> NormalSystem:
    """Mean of per-trajectory (A^(m), b^(m)) pairs, indexed by position.

    Blocks are rescaled to raw totals by L * N so that ``.A`` and ``.b`` return
    their arithmetic means.
    """
    if not systems:
        raise SolverError("nothing to accumulate")
    n = np.asarray(systems[0][1]).shape[0]
    result = NormalSystem(n, L, N)
    for m, (A_m, b_m) in enumerate(systems):
        result.add(m, np.asarray(A_m) * (L * N), np.asarray(b_m) * (L * N))
    return result


def assemble_states(
    spec: SystemSpec,
    space: HypothesisSpace,
    states: np.ndarray,
    velocities: Optional[np.ndarray] = None,
    start: int = 0,
    overflow: str = "error",
) -> NormalSystem:
    """Normal system of consecutive trajectories (M, L, N, d) whose first index is ``start``."""
    system = NormalSystem(space.n, states.shape[1], spec.N)
    for offset in range(states.shape[0]):
        v = None if velocities is None else velocities[offset]
        system.add(start + offset, *_trajectory_totals(spec, space, states[offset], v, overflow))
    return system


def _assemble_chunk(
    spec: SystemSpec,
    space: HypothesisSpace,
    overflow: str,
    start: int,
    states: np.ndarray,
    velocities: Optional[np.ndarray],
) -> NormalSystem:
    return assemble_states(spec, space, states, velocities, start, overflow)


def _merge(left: NormalSystem, right: NormalSystem) -> NormalSystem:
    return left.merge(right)


def assemble_batch(
    spec: SystemSpec,
    space: HypothesisSpace,
    batch: TrajectoryBatch,
    threads: int = 1,
    overflow: str = "error",
    require_velocities: bool = True,
) -> NormalSystem:
    """Normal system of a whole batch, assembled chunk by chunk."""
    if require_velocities and not batch.has_velocities:
        raise ValueError("batch has no velocities; estimate or attach them first")
    chunk_size = get_settings().chunk_size
    chunks = [
        (
            start,
            batch.states[start:stop],
            None if batch.velocities is None else batch.velocities[start:stop],
        )
        for start, stop in chunk_ranges(batch.M, chunk_size)
    ]
    worker = functools.partial(_assemble_chunk, spec, space, overflow)
    return map_reduce(worker, _merge, chunks, threads)


@dataclass(frozen=True)
class Solution:
    """Pseudo-inverse solve of a normal system with its conditioning diagnostics."""

    coeffs: np.ndarray
    rank: int
    lambda_min: float
    lambda_max: float
    condition: float


def solve(ns: Union[NormalSystem, Tuple[np.ndarray, np.ndarray]], sv_cutoff: Optional[float] = None) -> Solution:
    """a = A^+ b by symmetric eigendecomposition.

    Eigenvalues at or below ``sv_cutoff * lambda_max`` count as zero.

    Raises:
        SolverError: non-finite entries or mismatched dimensions
    """
    if sv_cutoff is None:
        sv_cutoff = get_settings().sv_cutoff
    if isinstance(ns, NormalSystem):
        A, b = ns.normal_equations()
    else:
        A, b = np.asarray(ns[0], float), np.asarray(ns[1], float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
        raise SolverError(f"matrix {A.shape} and vector {b.shape} do not form a square system")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise SolverError("normal system has non-finite entries")
    eigenvalues, eigenvectors = linalg.eigh(0.5 * (A + A.T))
    lambda_max = float(eigenvalues[-1]) if eigenvalues.size else 0.0
    keep = eigenvalues > sv_cutoff * lambda_max if lambda_max > 0 else np.zeros(eigenvalues.size, dtype=bool)
    basis = eigenvectors[:, keep]
    coeffs = basis @ ((basis.T @ b) / eigenvalues[keep])
    rank = int(np.count_nonzero(keep))
    lambda_min = float(eigenvalues[0]) if eigenvalues.size else 0.0
    smallest_kept = float(eigenvalues[keep][0]) if rank else 0.0
    condition = lambda_max / smallest_kept if rank else float("inf")
    logger.info(
        "Normal system solved",
        n=int(A.shape[0]),
        rank=rank,
        lambda_min=lambda_min,
        lambda_max=lambda_max,
        condition=condition,
    )
    return Solution(coeffs=coeffs, rank=rank, lambda_min=lambda_min, lambda_max=lambda_max, condition=condition)


def _kernel_grid(spec: SystemSpec, kernels: Union[Estimator, Iterable[Iterable[Kernel]]]):
    if isinstance(kernels, Estimator):
        return kernels.kernels()
    return [list(row) for row in kernels]


def empirical_error(
    spec: SystemSpec,
    kernels: Union[Estimator, Iterable[Iterable[Kernel]]],
    batch: TrajectoryBatch,
) -> float:
    """E_M = (1/ML) sum_{m,l} ||Xdot^(m)(t_l) - f_phi(X^(m)(t_l))||_S^2."""
    if not batch.has_velocities:
        raise ValueError("empirical error needs observed velocities")
    model = spec.with_kernels(_kernel_grid(spec, kernels))
    total = 0.0
    for m in range(batch.M):
        residual = batch.velocities[m] - batch_rhs(model, batch.states[m])
        total += float(np.sum(snorm_squared(model, residual)))
    return total / (batch.M * batch.L)


def estimator_from_solution(space: HypothesisSpace, solution: Solution, ns: NormalSystem) -> Estimator:
    """Wrap solver output with its diagnostics."""
    return Estimator(
        space=space,
        coeffs=solution.coeffs,
        diagnostics={
            "rank": solution.rank,
            "lambda_min": solution.lambda_min,
            "lambda_max": solution.lambda_max,
            "condition": solution.condition,
            "m_count": ns.m_count,
        },
    )

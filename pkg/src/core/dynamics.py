"""Forward model: right-hand side, S-norm, integration and velocity estimation."""

import functools
import zlib
from typing import Any, Optional, Sequence

import numpy as np
import structlog
from scipy.integrate import solve_ivp

from ..config import get_settings
from .errors import IntegrationError, KernelEvaluationError, ShapeMismatchError
from .parallel import chunk_ranges, parallel_map
from .samplers import InitialSampler, sample_initial
from .system import SystemSpec, TrajectoryBatch

logger = structlog.get_logger()


def interaction_weights(spec: SystemSpec, X: np.ndarray):
    """Pairwise displacements, distances and weights phi_{k_i k_i'}(r_ii') / N_{k_i'}.

    ``X`` has shape (..., N, d). Returns ``(diff, r, W)`` with
    ``diff[..., i, i'] = x_i' - x_i``. The diagonal of ``W`` is exactly zero
    whatever the kernels return at r = 0.
    """
    diff = X[..., None, :, :] - X[..., :, None, :]
    r = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    W = np.zeros_like(r)
    for k in range(spec.K):
        rows = spec.type_slice(k)
        for kp in range(spec.K):
            cols = spec.type_slice(kp)
            W[..., rows, cols] = spec.kernels[k][kp](r[..., rows, cols]) / spec.type_sizes[kp]
    diagonal = np.arange(spec.N)
    W[..., diagonal, diagonal] = 0.0
    if not np.all(np.isfinite(W)):
        bad = tuple(np.argwhere(~np.isfinite(W))[0])
        raise KernelEvaluationError(int(bad[-2]), int(bad[-1]), float(r[bad]))
    return diff, r, W


def eval_rhs(spec: SystemSpec, state: Any) -> np.ndarray:
    """Velocity x_i' = sum_{i'} phi_{k_i k_i'}(r_ii') / N_{k_i'} * (x_i' - x_i).

    Accepts a flat (N*d,) or (N, d) state and returns the same shape.
    """
    arr = np.asarray(state, dtype=float)
    X = spec.as_state(arr)
    diff, _, W = interaction_weights(spec, X)
    velocity = np.einsum("ij,ijk->ik", W, diff)
    return velocity.reshape(arr.shape)


def batch_rhs(spec: SystemSpec, states: Any) -> np.ndarray:
    """Right-hand side at every state of a (..., N, d) stack."""
    arr = np.asarray(states, dtype=float)
    if arr.shape[-2:] != (spec.N, spec.d):
        raise ShapeMismatchError(f"expected trailing shape ({spec.N}, {spec.d}), got {arr.shape}")
    diff, _, W = interaction_weights(spec, arr)
    return np.einsum("...ij,...ijk->...ik", W, diff)


def snorm_squared(spec: SystemSpec, v: Any) -> np.ndarray:
    """Squared S-norm over the trailing (N, d) axes of ``v``."""
    arr = np.asarray(v, dtype=float)
    if arr.shape[-2:] != (spec.N, spec.d):
        raise ShapeMismatchError(f"expected trailing shape ({spec.N}, {spec.d}), got {arr.shape}")
    return np.einsum("...ik,...ik,i->...", arr, arr, spec.agent_weights)


def snorm(spec: SystemSpec, v: Any) -> float:
    """S-norm (sum_i ||v_i||^2 / N_{k_i})^(1/2) of one state-shaped vector."""
    return float(np.sqrt(snorm_squared(spec, spec.as_state(v))))


def simulate(
    spec: SystemSpec,
    initial: Any,
    times: Sequence[float],
    rtol: Optional[float] = None,
    atol: Optional[float] = None,
) -> np.ndarray:
    """Integrate from ``initial`` and return the states at ``times``, shape (L, N, d).

    Adaptive Runge-Kutta 5(4) with dense output; local error controlled to
    ``rtol``/``atol`` per component (settings default 1e-5 / 1e-6).

    Raises:
        IntegrationError: step-size underflow or a non-finite state
    """
    settings = get_settings()
    rtol = settings.rtol if rtol is None else rtol
    atol = settings.atol if atol is None else atol
    times = np.asarray(times, dtype=float)
    X0 = spec.as_state(initial).copy()
    if times.size == 1:
        return X0[None]

    def rhs(_t, y):
        return eval_rhs(spec, y)

    try:
        solution = solve_ivp(
            rhs,
            (times[0], times[-1]),
            X0.ravel(),
            method="RK45",
            t_eval=times,
            rtol=rtol,
            atol=atol,
        )
    except KernelEvaluationError as e:
        raise IntegrationError(str(e)) from e

    last_time = float(solution.t[-1]) if solution.t.size else float(times[0])
    if solution.status != 0 or solution.y.shape[1] != times.size:
        raise IntegrationError(solution.message, last_time=last_time)
    if not np.all(np.isfinite(solution.y)):
        raise IntegrationError("non-finite state", last_time=last_time)
    return solution.y.T.reshape(times.size, spec.N, spec.d)


def backward_diff_velocities(batch: TrajectoryBatch) -> TrajectoryBatch:
    """Velocities (X(t_{l+1}) - X(t_l)) / (t_{l+1} - t_l), keeping the first L = L+1 - 1 nodes."""
    if batch.L < 2:
        raise ValueError(f"need at least 2 time points for finite differences, got {batch.L}")
    steps = np.diff(batch.times)[None, :, None, None]
    velocities = np.diff(batch.states, axis=1) / steps
    return TrajectoryBatch(
        times=batch.times[:-1],
        states=batch.states[:, :-1],
        velocities=velocities,
        seed=batch.seed,
        metadata={**batch.metadata, "velocities": "finite_difference"},
    )


def exact_velocities(spec: SystemSpec, batch: TrajectoryBatch) -> TrajectoryBatch:
    """Attach the true right-hand side at every sampled state."""
    velocities = np.empty_like(batch.states)
    for m in range(batch.M):
        velocities[m] = batch_rhs(spec, batch.states[m])
    return TrajectoryBatch(
        times=batch.times,
        states=batch.states,
        velocities=velocities,
        seed=batch.seed,
        metadata={**batch.metadata, "velocities": "exact"},
    )


def derive_seed(seed: int, namespace: str, trial: int = 0) -> int:
    """Stable 64-bit seed for one batch of one experiment."""
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(namespace.encode("utf-8")), int(trial)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def trajectory_rng(batch_seed: int, m: int) -> np.random.Generator:
    """Per-trajectory stream ``batch_seed XOR m``; independent of generation order."""
    return np.random.default_rng(int(batch_seed) ^ int(m))


def simulate_chunk(
    spec: SystemSpec,
    sampler: InitialSampler,
    times: np.ndarray,
    batch_seed: int,
    start: int,
    stop: int,
    rtol: float,
    atol: float,
) -> np.ndarray:
    states = np.empty((stop - start, times.size, spec.N, spec.d))
    for offset, m in enumerate(range(start, stop)):
        initial = sample_initial(sampler, spec, trajectory_rng(batch_seed, m))
        try:
            states[offset] = simulate(spec, initial, times, rtol=rtol, atol=atol)
        except IntegrationError as e:
            raise IntegrationError(f"trajectory {m}: {e}", last_time=e.last_time) from e
    return states


def generate_batch(
    spec: SystemSpec,
    sampler: InitialSampler,
    times: Sequence[float],
    M: int,
    seed: int,
    namespace: str = "train",
    trial: int = 0,
    threads: Optional[int] = None,
) -> TrajectoryBatch:
    """Simulate M trajectories from mu_0; the first M' < M are the M'-batch."""
    settings = get_settings()
    threads = settings.threads if threads is None else threads
    times = np.asarray(times, dtype=float)
    batch_seed = derive_seed(seed, namespace, trial)
    worker = functools.partial(
        simulate_chunk, spec, sampler, times, batch_seed, rtol=settings.rtol, atol=settings.atol
    )
    chunks = parallel_map(worker, chunk_ranges(M, settings.chunk_size), threads)
    states = np.concatenate(chunks) if chunks else np.empty((0, times.size, spec.N, spec.d))
    logger.info("Trajectory batch generated", namespace=namespace, trial=trial, M=M, L=times.size)
    return TrajectoryBatch(
        times=times,
        states=states,
        seed=batch_seed,
        metadata={"namespace": namespace, "trial": trial},
    )

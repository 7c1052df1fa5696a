"""Trajectory prediction errors, noise models, rate fitting and error bounds."""

import functools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.integrate import trapezoid

from ..config import get_settings
from .dynamics import batch_rhs, derive_seed, simulate, snorm_squared, trajectory_rng
from .errors import KernelLearnError
from .kernels import Kernel, admissible_constant
from .measure import pair_distances
from .parallel import parallel_map
from .samplers import InitialSampler, sample_initial
from .system import SystemSpec, TrajectoryBatch

logger = structlog.get_logger()

NOISE_MODELS = ("additive", "multiplicative")


def trajectory_error(
    spec: SystemSpec,
    times: Sequence[float],
    traj_true: np.ndarray,
    traj_est: np.ndarray,
    window: Tuple[float, float],
) -> float:
    """max_{t in window} ||X(t) - X_hat(t)||_S over the common time grid.

    Raises:
        ValueError: no grid point falls inside the window
    """
    times = np.asarray(times, dtype=float)
    inside = (times >= window[0]) & (times <= window[1])
    if not np.any(inside):
        raise ValueError(f"no time points in window [{window[0]}, {window[1]}]")
    gap = np.asarray(traj_true, dtype=float)[inside] - np.asarray(traj_est, dtype=float)[inside]
    return float(np.sqrt(np.max(snorm_squared(spec, gap))))


def add_noise(batch: TrajectoryBatch, model: str, sigma: float, rng: np.random.Generator) -> TrajectoryBatch:
    """Perturb positions and velocities with i.i.d. Unif([-sigma, sigma]) noise per component.

    ``additive``: X + eta; ``multiplicative``: X * (1 + eta).
    """
    if sigma < 0:
        raise ValueError(f"noise level must be nonnegative, got {sigma}")
    if model not in NOISE_MODELS:
        raise ValueError(f"Unknown noise model '{model}'. Known models: {NOISE_MODELS}")
    if not batch.has_velocities:
        raise ValueError("noise is applied to positions and velocities; batch has no velocities")
    if sigma == 0:
        return batch
    eta_x = rng.uniform(-sigma, sigma, size=batch.states.shape)
    eta_v = rng.uniform(-sigma, sigma, size=batch.velocities.shape)
    if model == "additive":
        states, velocities = batch.states + eta_x, batch.velocities + eta_v
    else:
        states, velocities = batch.states * (1.0 + eta_x), batch.velocities * (1.0 + eta_v)
    return TrajectoryBatch(
        times=batch.times,
        states=states,
        velocities=velocities,
        seed=batch.seed,
        metadata={**batch.metadata, "noise": model, "sigma": sigma},
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (ln M, ln error); ``rate`` is minus the slope."""

    rate: float
    slope: float
    intercept: float
    residual: float
    points: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "rate": self.rate,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "points": self.points,
        }


def fit_rate(points: Sequence[Tuple[float, float]]) -> RateFit:
    """Fit error ~ C * M^(-rate) by ordinary least squares in log-log coordinates."""
    if len(points) < 3:
        raise ValueError(f"need at least 3 (M, error) points, got {len(points)}")
    M, errors = np.asarray(points, dtype=float).T
    if np.any(errors <= 0) or np.any(M <= 0):
        raise ValueError("rate fitting needs positive M and error values")
    design = np.column_stack([np.log(M), np.ones_like(M)])
    (slope, intercept), *_ = np.linalg.lstsq(design, np.log(errors), rcond=None)
    residual = float(np.linalg.norm(design @ np.array([slope, intercept]) - np.log(errors)))
    return RateFit(
        rate=float(-slope), slope=float(slope), intercept=float(intercept), residual=residual, points=len(M)
    )


def gronwall_bound(
    spec: SystemSpec,
    kernels_est: Sequence[Sequence[Kernel]],
    times: Sequence[float],
    traj_true: np.ndarray,
    S: float,
) -> float:
    """2T exp(8 T^2 K^2 S^2) * int_0^T ||Xdot - f_phi_hat(X)||_S^2 dt along the true trajectory.

    The integral uses the trapezoidal rule on ``times``; T is the span of ``times``.
    """
    times = np.asarray(times, dtype=float)
    T = float(times[-1] - times[0])
    residual = batch_rhs(spec, traj_true) - batch_rhs(spec.with_kernels(kernels_est), traj_true)
    integral = float(trapezoid(snorm_squared(spec, residual), times))
    exponent = 8.0 * T ** 2 * spec.K ** 2 * S ** 2
    if exponent > 700.0:
        return math.inf if integral > 0 else 0.0
    return 2.0 * T * math.exp(exponent) * integral


def admissible_bound(spec: SystemSpec, kernels_est: Sequence[Sequence[Kernel]], R: float) -> float:
    """Common admissible constant S of both kernel sets on [0, R]."""
    kernels = [kernel for row in spec.kernels for kernel in row]
    kernels += [kernel for row in kernels_est for kernel in row]
    return max(admissible_constant(kernel, R) for kernel in kernels)


@dataclass(frozen=True)
class JensenCheck:
    """E_M(phi_hat) <= K^2 ||(phi_hat - phi)(.).||^2 on the training measure."""

    energy: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.energy <= self.bound * (1.0 + 1e-9) + 1e-14


def sample_error_norms(
    spec: SystemSpec, kernels_est: Sequence[Sequence[Kernel]], states: np.ndarray
) -> np.ndarray:
    """Per-pair ||(phi_hat - phi)(.).||^2 under the exact empirical distance distribution of ``states``."""
    norms = np.zeros((spec.K, spec.K))
    for k in range(spec.K):
        for kp in range(spec.K):
            if k == kp and spec.type_sizes[k] < 2:
                continue
            r = pair_distances(spec, states, k, kp)
            gap = (kernels_est[k][kp](r) - spec.kernels[k][kp](r)) * r
            norms[k, kp] = float(np.mean(gap ** 2))
    return norms


def jensen_check(
    spec: SystemSpec, kernels_est: Sequence[Sequence[Kernel]], batch: TrajectoryBatch
) -> JensenCheck:
    """Compare the empirical error of ``kernels_est`` on an exact-velocity batch with K^2 times
    its squared kernel error."""
    if not batch.has_velocities:
        raise ValueError("Jensen check needs exact velocities")
    model = spec.with_kernels(kernels_est)
    energy = 0.0
    for m in range(batch.M):
        energy += float(np.sum(snorm_squared(spec, batch.velocities[m] - batch_rhs(model, batch.states[m]))))
    energy /= batch.M * batch.L
    bound = spec.K ** 2 * float(np.sum(sample_error_norms(spec, kernels_est, batch.states)))
    check = JensenCheck(energy=energy, bound=bound)
    if not check.holds:
        logger.warning("Jensen bound violated", energy=energy, bound=bound)
    return check


@dataclass
class WindowSummary:
    mean: float
    std: float
    count: int


@dataclass
class PredictionReport:
    """Trajectory-prediction errors per initial-condition class and time window.

    ``errors[cls][window]`` lists the per-IC TM errors; failed ICs are counted in
    ``failures[cls]`` and left out of the statistics.
    """

    windows: Dict[str, Tuple[float, float]]
    errors: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    failures: Dict[str, int] = field(default_factory=dict)
    bound_violations: int = 0

    def summary(self, ic_class: str, window: str) -> WindowSummary:
        values = np.asarray(self.errors.get(ic_class, {}).get(window, []), dtype=float)
        if values.size == 0:
            return WindowSummary(mean=math.nan, std=math.nan, count=0)
        return WindowSummary(mean=float(values.mean()), std=float(values.std()), count=int(values.size))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "windows": {name: list(span) for name, span in self.windows.items()},
            "summary": {
                cls: {window: vars(self.summary(cls, window)) for window in self.windows}
                for cls in self.errors
            },
            "failures": dict(self.failures),
            "bound_violations": self.bound_violations,
        }


def prediction_grid(t_start: float, t_train_end: float, t_final: float, nodes: int = 200) -> np.ndarray:
    """``nodes`` points per window on [t_start, t_train_end] and [t_train_end, t_final]."""
    train = np.linspace(t_start, t_train_end, nodes)
    if t_final <= t_train_end:
        return train
    future = np.linspace(t_train_end, t_final, nodes)
    return np.concatenate([train, future[1:]])


def _predict_one(
    spec: SystemSpec,
    model: SystemSpec,
    grid: np.ndarray,
    windows: Dict[str, Tuple[float, float]],
    S: Optional[float],
    initial: np.ndarray,
) -> Optional[Tuple[Dict[str, float], bool]]:
    try:
        truth = simulate(spec, initial, grid)
        estimate = simulate(model, initial, grid)
    except KernelLearnError as e:
        logger.warning("Prediction integration failed", error=str(e))
        return None
    errors = {name: trajectory_error(spec, grid, truth, estimate, span) for name, span in windows.items()}
    violated = False
    if S is not None:
        train_end = windows["train"][1]
        inside = grid <= train_end
        bound = gronwall_bound(spec, model.kernels, grid[inside], truth[inside], S)
        gap = float(np.sqrt(np.max(snorm_squared(spec, truth[inside] - estimate[inside]))))
        violated = gap ** 2 > bound * (1.0 + 1e-6)
    return errors, violated


def prediction_experiment(
    spec: SystemSpec,
    kernels_est: Sequence[Sequence[Kernel]],
    sampler: InitialSampler,
    training_initials: np.ndarray,
    times: Tuple[float, float, float],
    ics: int,
    seed: int,
    trial: int = 0,
    nodes: int = 200,
    large_n_factor: int = 4,
    R: Optional[float] = None,
    threads: Optional[int] = None,
) -> PredictionReport:
    """Integrate truth and estimate from shared initial conditions and record TM errors.

    Classes: ``training`` (initial states of the training batch), ``random``
    (fresh draws from mu_0) and ``large_n`` (same kernels, ``large_n_factor``
    times as many agents of every type). Windows are [t_1, t_L] and [t_L, t_f].
    When ``R`` is given the Gronwall bound is checked on the training window.
    """
    threads = get_settings().threads if threads is None else threads
    t_start, t_train_end, t_final = times
    grid = prediction_grid(t_start, t_train_end, t_final, nodes)
    windows = {"train": (t_start, t_train_end)}
    if t_final > t_train_end:
        windows["future"] = (t_train_end, t_final)
    report = PredictionReport(windows=windows)

    big = spec.with_type_sizes([large_n_factor * n for n in spec.type_sizes])
    rng_random = trajectory_rng(derive_seed(seed, "predict-random", trial), 0)
    rng_large = trajectory_rng(derive_seed(seed, "predict-large", trial), 0)
    classes = {
        "training": (spec, [training_initials[m] for m in range(min(ics, len(training_initials)))]),
        "random": (spec, [sample_initial(sampler, spec, rng_random) for _ in range(ics)]),
        "large_n": (big, [sample_initial(sampler, big, rng_large) for _ in range(ics)]),
    }
    S = admissible_bound(spec, kernels_est, R) if R is not None else None
    for ic_class, (system, initials) in classes.items():
        model = system.with_kernels(kernels_est)
        worker = functools.partial(_predict_one, system, model, grid, windows, S)
        outcomes = parallel_map(worker, [(initial,) for initial in initials], threads)
        report.errors[ic_class] = {name: [] for name in windows}
        report.failures[ic_class] = 0
        for outcome in outcomes:
            if outcome is None:
                report.failures[ic_class] += 1
                continue
            errors, violated = outcome
            for name, value in errors.items():
                report.errors[ic_class][name].append(value)
            report.bound_violations += int(violated)
    if report.bound_violations:
        logger.warning("Trajectory bound violated", count=report.bound_violations)
    return report

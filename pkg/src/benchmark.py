"""Benchmark orchestration: reference measures, learning cells, rate fits and result bundles."""

import functools
import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .config import get_settings
from .core.coercivity import CoercivityEstimate, coercivity_from_system, orthonormalize
from .core.dynamics import (
    backward_diff_velocities,
    derive_seed,
    exact_velocities,
    generate_batch,
    simulate_chunk,
    trajectory_rng,
)
from .core.errors import ConfigError, IntegrationError, KernelLearnError
from .core.evaluation import add_noise, fit_rate, jensen_check, prediction_experiment
from .core.hypothesis import (
    Estimator,
    HypothesisSpace,
    choose_dimension,
    mean_estimator,
    smooth_estimator,
    support_intervals,
)
from .core.io import (
    curve_points,
    results_frame,
    write_estimator,
    write_figure_data,
    write_json,
    write_measure,
    write_results,
)
from .core.measure import (
    PairwiseMeasure,
    measure_from_states,
    pair_distances,
    relative_kernel_error,
    report_overflow,
    uniform_edges,
)
from .core.parallel import chunk_ranges, map_reduce
from .core.regression import NormalSystem, assemble_batch, assemble_states, estimator_from_solution, solve
from .core.samplers import InitialSampler
from .core.system import SystemSpec, TrajectoryBatch
from .models.experiment import (
    BenchmarkSummary,
    CellResult,
    CellStatus,
    ExperimentConfig,
    NoiseModel,
    VelocityMode,
)
from .monitoring import MetricsCollector, StageMonitor

logger = structlog.get_logger()

PathLike = Union[str, Path]

RATE_METRICS = ("kernel_error", "kernel_error_raw")


def resolve_seed(config: ExperimentConfig) -> int:
    return get_settings().seed if config.seed is None else config.seed


def _tolerances() -> Tuple[float, float]:
    settings = get_settings()
    return settings.rtol, settings.atol


def _chunk_states(spec, sampler, times, batch_seed, tolerances, start, stop) -> np.ndarray:
    return simulate_chunk(spec, sampler, times, batch_seed, start, stop, *tolerances)


def distance_ranges(spec: SystemSpec, states: np.ndarray) -> np.ndarray:
    """(K, K, 2) array of observed [min, max] distance per pair; NaN for undefined pairs."""
    ranges = np.full((spec.K, spec.K, 2), np.nan)
    for k in range(spec.K):
        for kp in range(spec.K):
            if k == kp and spec.type_sizes[k] < 2:
                continue
            r = pair_distances(spec, states, k, kp)
            if r.size:
                ranges[k, kp] = r.min(), r.max()
    return ranges


def _chunk_ranges(spec, sampler, times, batch_seed, tolerances, start, stop) -> np.ndarray:
    return distance_ranges(spec, _chunk_states(spec, sampler, times, batch_seed, tolerances, start, stop))


def _widen(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.stack([np.fmin(left[..., 0], right[..., 0]), np.fmax(left[..., 1], right[..., 1])], axis=-1)


def _intervals_from_ranges(ranges: np.ndarray, R: float) -> Tuple[Tuple[Tuple[float, float], ...], ...]:
    rows = []
    for k in range(ranges.shape[0]):
        row = []
        for kp in range(ranges.shape[1]):
            lo, hi = ranges[k, kp]
            if not (np.isfinite(lo) and np.isfinite(hi)) or min(R, hi) <= max(0.0, lo):
                row.append((0.0, R))
            else:
                row.append((max(0.0, float(lo)), min(R, float(hi))))
        rows.append(tuple(row))
    return tuple(rows)


def _chunk_measure(spec, sampler, times, batch_seed, tolerances, edges, start, stop) -> PairwiseMeasure:
    states = _chunk_states(spec, sampler, times, batch_seed, tolerances, start, stop)
    return measure_from_states(spec, states, edges)


def _merge_measures(left: PairwiseMeasure, right: PairwiseMeasure) -> PairwiseMeasure:
    return left.merge(right)


def reference_measure(
    spec: SystemSpec,
    sampler: InitialSampler,
    times: Sequence[float],
    M_rho: int,
    seed: int,
    bins: Optional[int] = None,
    R: Optional[float] = None,
    threads: int = 1,
) -> PairwiseMeasure:
    """Pairwise-distance measure of ``M_rho`` fresh trajectories, streamed chunk by chunk.

    Without ``R`` a first pass finds the largest distance; the histogram pass
    regenerates the same trajectories from their seeds.
    """
    settings = get_settings()
    bins = settings.metric_bins if bins is None else bins
    times = np.asarray(times, dtype=float)
    batch_seed = derive_seed(seed, "reference")
    chunks = chunk_ranges(M_rho, settings.chunk_size)
    tolerances = _tolerances()
    if R is None:
        worker = functools.partial(_chunk_ranges, spec, sampler, times, batch_seed, tolerances)
        R = float(np.nanmax(map_reduce(worker, _widen, chunks, threads)[..., 1]))
        logger.info("Measure support found", R=R, M=M_rho)
    edges = uniform_edges(R, bins)
    worker = functools.partial(_chunk_measure, spec, sampler, times, batch_seed, tolerances, edges)
    measure = map_reduce(worker, _merge_measures, chunks, threads)
    report_overflow(measure)
    logger.info("Reference measure built", M=M_rho, L=times.size, R=R, bins=bins)
    return measure


def _noisy(config: ExperimentConfig) -> bool:
    return config.learning.noise != NoiseModel.NONE and config.learning.sigma > 0


def training_batch(
    config: ExperimentConfig,
    spec: SystemSpec,
    sampler: InitialSampler,
    M: int,
    seed: int,
    trial: int,
    threads: int = 1,
) -> TrajectoryBatch:
    """Training trajectories with velocities per the learning block, noise applied."""
    learning = config.learning
    finite_difference = learning.velocity == VelocityMode.FINITE_DIFFERENCE
    times = config.system.observation_times(extra_step=finite_difference)
    batch = generate_batch(spec, sampler, times, M, seed, namespace="train", trial=trial, threads=threads)
    batch = backward_diff_velocities(batch) if finite_difference else exact_velocities(spec, batch)
    if _noisy(config):
        rng = trajectory_rng(derive_seed(seed, "noise", trial), 0)
        batch = add_noise(batch, learning.noise.value, learning.sigma, rng)
    return batch


def fit_estimator(
    spec: SystemSpec,
    batch: TrajectoryBatch,
    degree: int,
    partitions: int,
    R: float,
    overflow: str = "error",
    clip_to_support: bool = False,
    threads: int = 1,
) -> Tuple[Estimator, NormalSystem]:
    """Assemble, solve and smooth over the space with ``partitions`` pieces per pair."""
    if clip_to_support:
        space = HypothesisSpace(
            K=spec.K, degree=degree, partitions=partitions, intervals=support_intervals(spec, batch.states, R)
        )
    else:
        space = HypothesisSpace.uniform(spec.K, R, degree, partitions)
    ns = assemble_batch(spec, space, batch, threads=threads, overflow=overflow)
    est = smooth_estimator(estimator_from_solution(space, solve(ns), ns))
    return est, ns


def _row(experiment: str, M: int, trial: int, metric: str, value: Any, window: str = "") -> Dict[str, Any]:
    return {"experiment": experiment, "M": M, "trial": trial, "metric": metric, "window": window, "value": float(value)}


def learn_cell(
    config: ExperimentConfig,
    spec: SystemSpec,
    sampler: InitialSampler,
    batch: TrajectoryBatch,
    mu: PairwiseMeasure,
    seed: int,
    trial: int,
    threads: int = 1,
    metrics: Optional[MetricsCollector] = None,
    experiment: Optional[str] = None,
) -> Tuple[List[Dict[str, Any]], Estimator]:
    """One (M, trial) cell: learn from ``batch`` and evaluate against ``mu``."""
    learning = config.learning
    experiment = experiment or config.name
    M = batch.M
    row = functools.partial(_row, experiment, M, trial)
    partitions = choose_dimension(M, learning.regularity, learning.multiplier)
    est, ns = fit_estimator(
        spec,
        batch,
        learning.degree,
        partitions,
        mu.R,
        overflow=learning.overflow.value,
        clip_to_support=learning.clip_to_support,
        threads=threads,
    )
    if metrics is not None:
        metrics.record_solution(est.diagnostics["lambda_min"])
    smoothed = relative_kernel_error(est.smoothed_kernels(), spec.kernels, mu)
    raw = relative_kernel_error(est.kernels(), spec.kernels, mu)
    rows = [
        row("kernel_error", smoothed.aggregate),
        row("kernel_error_raw", raw.aggregate),
        row("empirical_error", ns.energy(est.coeffs)),
        row("lambda_min", est.diagnostics["lambda_min"]),
        row("rank", est.diagnostics["rank"]),
        row("partitions", partitions),
    ]
    for k in range(spec.K):
        for kp in range(spec.K):
            if mu.defined[k, kp]:
                rows.append(row(f"kernel_error_pair_{k}{kp}", smoothed.per_pair[k, kp]))

    if learning.velocity == VelocityMode.EXACT and not _noisy(config):
        check = jensen_check(spec, est.kernels(), batch)
        rows.append(row("jensen_ratio", check.energy / check.bound if check.bound > 0 else math.nan))

    prediction = config.prediction
    if prediction.enabled and prediction.ics > 0 and config.system.t_end > config.system.t_start:
        system = config.system
        report = prediction_experiment(
            spec,
            est.smoothed_kernels(),
            sampler,
            batch.states[:, 0],
            (system.t_start, system.t_end, system.t_final),
            prediction.ics,
            seed,
            trial=trial,
            nodes=prediction.nodes,
            large_n_factor=prediction.large_n_factor,
            R=mu.R,
            threads=threads,
        )
        for ic_class in report.errors:
            for window in report.windows:
                rows.append(row(f"tm_error_{ic_class}", report.summary(ic_class, window).mean, window))
        rows.append(row("tm_bound_violations", report.bound_violations))
        if metrics is not None:
            failures = sum(report.failures.values())
            metrics.record_trajectories("prediction", 2 * len(report.errors) * prediction.ics, failures)
    return rows, est


def _failed_cell(experiment: str, M: int, trial: int, error: Exception, metrics: MetricsCollector) -> CellResult:
    logger.error("Learning cell failed", experiment=experiment, M=M, trial=trial, error=str(error))
    metrics.record_cell(experiment, CellStatus.FAILED.value)
    return CellResult(M=M, trial=trial, status=CellStatus.FAILED, error=str(error))


def learning_curves(
    config: ExperimentConfig,
    spec: SystemSpec,
    sampler: InitialSampler,
    mu: PairwiseMeasure,
    seed: int,
    threads: int = 1,
    metrics: Optional[MetricsCollector] = None,
    experiment: Optional[str] = None,
    estimator_dir: Optional[PathLike] = None,
) -> Tuple[List[Dict[str, Any]], List[CellResult]]:
    """Every (M, trial) cell of the learning block; failed cells are recorded and skipped.

    Each trial simulates the largest M once; smaller M use its leading trajectories.
    """
    metrics = metrics or MetricsCollector()
    experiment = experiment or config.name
    learning = config.learning
    rows: List[Dict[str, Any]] = []
    cells: List[CellResult] = []
    by_M: Dict[int, List[Estimator]] = defaultdict(list)

    for trial in range(learning.trials):
        try:
            with StageMonitor(metrics, "training_batch"):
                full = training_batch(config, spec, sampler, learning.M[-1], seed, trial, threads)
            metrics.record_trajectories("train", learning.M[-1])
        except KernelLearnError as e:
            if isinstance(e, IntegrationError):
                metrics.record_trajectories("train", 0, failures=1)
            for M in learning.M:
                cells.append(_failed_cell(experiment, M, trial, e, metrics))
                rows.append(_row(experiment, M, trial, "cell_failed", 1.0))
            continue

        for M in learning.M:
            monitor = StageMonitor(metrics, "learning_cell")
            try:
                with monitor:
                    cell_rows, est = learn_cell(
                        config, spec, sampler, full.head(M), mu, seed, trial, threads, metrics, experiment
                    )
            except KernelLearnError as e:
                cells.append(_failed_cell(experiment, M, trial, e, metrics))
                rows.append(_row(experiment, M, trial, "cell_failed", 1.0))
                continue
            rows.extend(cell_rows)
            metrics.record_cell(experiment, CellStatus.COMPLETED.value)
            values = {entry["metric"]: entry["value"] for entry in cell_rows}
            cells.append(
                CellResult(
                    M=M,
                    trial=trial,
                    status=CellStatus.COMPLETED,
                    partitions=est.space.partitions,
                    kernel_error=values["kernel_error"],
                    kernel_error_raw=values["kernel_error_raw"],
                    duration=monitor.duration,
                )
            )
            by_M[M].append(est)
            if estimator_dir is not None:
                write_estimator(est, Path(estimator_dir) / f"M{M}_trial{trial}.json")
            logger.info(
                "Learning cell completed",
                experiment=experiment,
                M=M,
                trial=trial,
                kernel_error=values["kernel_error"],
            )

    if estimator_dir is not None:
        for M, estimators in by_M.items():
            try:
                mean = smooth_estimator(mean_estimator(estimators))
            except KernelLearnError as e:
                logger.warning("Mean estimator skipped", M=M, error=str(e))
                continue
            write_estimator(mean, Path(estimator_dir) / f"M{M}_mean.json")
    return rows, cells


def fit_rates(rows_or_frame, experiment: str, metric_names: Optional[Sequence[str]] = None) -> Dict[str, Dict[str, float]]:
    """Fitted decay rate per error metric; metrics with fewer than 3 usable M values are skipped."""
    frame = rows_or_frame if hasattr(rows_or_frame, "columns") else results_frame(rows_or_frame)
    if metric_names is None:
        pairs = sorted(m for m in frame["metric"].unique() if str(m).startswith("kernel_error_pair_"))
        metric_names = list(RATE_METRICS) + pairs
    rates = {}
    for metric in metric_names:
        points = curve_points(frame, metric, experiment=experiment)
        if len(points) < 3:
            logger.warning("Too few points for a rate fit", metric=metric, points=len(points))
            continue
        try:
            rates[metric] = fit_rate(points).to_dict()
        except ValueError as e:
            logger.warning("Rate fit skipped", metric=metric, error=str(e))
    return rates


def _manifest(config: ExperimentConfig, seed: int, R: float, cells, rates, files) -> BenchmarkSummary:
    settings = get_settings()
    return BenchmarkSummary(
        experiment=config.name,
        tool=settings.app_name,
        tool_version=settings.app_version,
        seed=seed,
        R=R,
        cells=cells,
        rates=rates,
        files=sorted(files),
    )


def run_benchmark(
    config: ExperimentConfig,
    out_dir: PathLike,
    threads: Optional[int] = None,
    metrics: Optional[MetricsCollector] = None,
) -> BenchmarkSummary:
    """Reference measure, every learning cell, rate fits; writes the results bundle to ``out_dir``."""
    threads = get_settings().threads if threads is None else threads
    metrics = metrics or MetricsCollector()
    seed = resolve_seed(config)
    config = config.model_copy(update={"seed": seed})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, sampler = config.system.build_spec(), config.system.build_sampler()

    logger.info("Benchmark started", experiment=config.name, seed=seed, threads=threads)
    with StageMonitor(metrics, "reference_measure"):
        mu = reference_measure(
            spec,
            sampler,
            config.system.observation_times(),
            config.measure.M_rho,
            seed,
            bins=config.measure.bins,
            R=config.learning.R,
            threads=threads,
        )
    metrics.record_trajectories("reference", config.measure.M_rho)
    try:
        spec.check_kernels(mu.R)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    rows, cells = learning_curves(
        config, spec, sampler, mu, seed, threads, metrics, estimator_dir=out / "estimators"
    )
    frame = results_frame(rows)
    rates = fit_rates(frame, config.name)
    s = config.learning.regularity

    write_json(config.model_dump(mode="json"), out / "config.json")
    write_results(rows, out / "results.csv")
    write_figure_data(frame, out / "figure_data.csv")
    write_measure(mu, out / "measure.csv")
    write_json(
        {"experiment": config.name, "theoretical_rate": s / (2 * s + 1), "rates": rates},
        out / "rates.json",
    )
    metrics.write(out / "metrics.prom")
    files = ["config.json", "results.csv", "figure_data.csv", "measure.csv", "rates.json", "metrics.prom"]
    files += [f"estimators/{p.name}" for p in sorted((out / "estimators").glob("*.json"))]
    summary = _manifest(config, seed, mu.R, cells, rates, files + ["manifest.json"])
    write_json(summary.model_dump(mode="json"), out / "manifest.json")

    failed = sum(cell.status == CellStatus.FAILED for cell in cells)
    logger.info("Benchmark finished", experiment=config.name, cells=len(cells), failed=failed, rates=rates)
    return summary


def noise_sweep(
    config: ExperimentConfig,
    sigmas: Sequence[float],
    out_dir: PathLike,
    threads: Optional[int] = None,
    metrics: Optional[MetricsCollector] = None,
) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Learning curves at every noise level in ``sigmas`` with matched trajectories and noise draws.

    Prediction is skipped. Returns rates per sigma for the raw and smoothed estimators.

    Raises:
        ConfigError: the learning block names no noise model
    """
    if config.learning.noise == NoiseModel.NONE:
        raise ConfigError("noise sweep needs a noise model in the learning block")
    if any(sigma < 0 for sigma in sigmas):
        raise ConfigError(f"noise levels must be nonnegative, got {list(sigmas)}")
    threads = get_settings().threads if threads is None else threads
    metrics = metrics or MetricsCollector()
    seed = resolve_seed(config)
    config = config.model_copy(update={"seed": seed})
    out = Path(out_dir)
    spec, sampler = config.system.build_spec(), config.system.build_sampler()
    with StageMonitor(metrics, "reference_measure"):
        mu = reference_measure(
            spec,
            sampler,
            config.system.observation_times(),
            config.measure.M_rho,
            seed,
            bins=config.measure.bins,
            R=config.learning.R,
            threads=threads,
        )

    all_rows: List[Dict[str, Any]] = []
    sweep: Dict[str, Dict[str, Dict[str, float]]] = {}
    for sigma in sigmas:
        level = config.model_copy(
            update={
                "learning": config.learning.model_copy(update={"sigma": float(sigma)}),
                "prediction": config.prediction.model_copy(update={"enabled": False}),
            }
        )
        experiment = f"{config.name}@sigma={sigma:g}"
        rows, _ = learning_curves(level, spec, sampler, mu, seed, threads, metrics, experiment=experiment)
        all_rows.extend(rows)
        sweep[f"{sigma:g}"] = fit_rates(rows, experiment, RATE_METRICS)
        logger.info("Noise level finished", sigma=sigma, rates=sweep[f"{sigma:g}"])

    write_json(config.model_dump(mode="json"), out / "config.json")
    write_results(all_rows, out / "results.csv")
    write_figure_data(results_frame(all_rows), out / "figure_data.csv")
    write_json({"experiment": config.name, "noise": config.learning.noise.value, "rates": sweep}, out / "noise_sweep.json")
    metrics.write(out / "metrics.prom")
    return sweep


def _chunk_coercivity(spec, sampler, times, batch_seed, tolerances, edges, spaces, start, stop):
    states = _chunk_states(spec, sampler, times, batch_seed, tolerances, start, stop)
    measure = measure_from_states(spec, states, edges)
    systems = [assemble_states(spec, space, states, start=start, overflow="clamp") for space in spaces]
    return measure, systems


def _merge_coercivity(left, right):
    return left[0].merge(right[0]), [a.merge(b) for a, b in zip(left[1], right[1])]


def run_coercivity(
    config: ExperimentConfig,
    partitions: Optional[Sequence[int]] = None,
    out_dir: Optional[PathLike] = None,
    threads: Optional[int] = None,
    metrics: Optional[MetricsCollector] = None,
) -> List[CoercivityEstimate]:
    """Coercivity constant per partition count on ``coercivity.M`` fresh trajectories.

    States are never held in full: each chunk contributes its histogram and one
    normal system per partition count.
    """
    settings = get_settings()
    threads = settings.threads if threads is None else threads
    metrics = metrics or MetricsCollector()
    seed = resolve_seed(config)
    block = config.coercivity
    partitions = list(partitions or block.partitions)
    if not partitions or any(n < 1 for n in partitions):
        raise ConfigError(f"partition counts must be positive, got {partitions}")
    degree = config.learning.degree if block.degree is None else block.degree
    spec, sampler = config.system.build_spec(), config.system.build_sampler()
    times = config.system.observation_times()
    batch_seed = derive_seed(seed, "coercivity")
    chunks = chunk_ranges(block.M, settings.chunk_size)
    tolerances = _tolerances()

    R = config.learning.R
    intervals = None
    if R is None or block.clip_to_support:
        worker = functools.partial(_chunk_ranges, spec, sampler, times, batch_seed, tolerances)
        ranges = map_reduce(worker, _widen, chunks, threads)
        if R is None:
            R = float(np.nanmax(ranges[..., 1]))
        if block.clip_to_support:
            intervals = _intervals_from_ranges(ranges, R)
    spaces = [
        HypothesisSpace(K=spec.K, degree=degree, partitions=n, intervals=intervals)
        if intervals is not None
        else HypothesisSpace.uniform(spec.K, R, degree, n)
        for n in partitions
    ]
    edges = uniform_edges(R, config.measure.bins)
    worker = functools.partial(
        _chunk_coercivity, spec, sampler, times, batch_seed, tolerances, edges, tuple(spaces)
    )
    with StageMonitor(metrics, "coercivity"):
        mu, systems = map_reduce(worker, _merge_coercivity, chunks, threads)
        report_overflow(mu)
        estimates = [coercivity_from_system(ns, orthonormalize(space, mu)) for space, ns in zip(spaces, systems)]
    metrics.record_trajectories("coercivity", block.M)

    if out_dir is not None:
        homogeneous = (spec.N - 1) / spec.N ** 2 if spec.K == 1 else None
        write_json(
            {
                "experiment": config.name,
                "seed": seed,
                "M": block.M,
                "L": times.size,
                "R": R,
                "degree": degree,
                "homogeneous_bound": homogeneous,
                "estimates": [estimate.to_dict() for estimate in estimates],
            },
            Path(out_dir) / "coercivity.json",
        )
        metrics.write(Path(out_dir) / "metrics.prom")
    return estimates


def evaluate_estimator(
    config: ExperimentConfig,
    est: Estimator,
    threads: Optional[int] = None,
    predict: bool = True,
) -> Dict[str, Any]:
    """Kernel errors of ``est`` against a fresh reference measure, and prediction errors."""
    threads = get_settings().threads if threads is None else threads
    seed = resolve_seed(config)
    spec, sampler = config.system.build_spec(), config.system.build_sampler()
    if est.space.K != spec.K:
        raise ConfigError(f"estimator has {est.space.K} types, system has {spec.K}")
    if est.smoothed is None:
        est = smooth_estimator(est)
    mu = reference_measure(
        spec,
        sampler,
        config.system.observation_times(),
        config.measure.M_rho,
        seed,
        bins=config.measure.bins,
        R=config.learning.R,
        threads=threads,
    )
    smoothed = relative_kernel_error(est.smoothed_kernels(), spec.kernels, mu)
    raw = relative_kernel_error(est.kernels(), spec.kernels, mu)
    report: Dict[str, Any] = {
        "experiment": config.name,
        "seed": seed,
        "R": mu.R,
        "kernel_error": smoothed.aggregate,
        "kernel_error_raw": raw.aggregate,
        "kernel_error_pairs": np.where(np.isnan(smoothed.per_pair), None, smoothed.per_pair).tolist(),
    }
    system = config.system
    if predict and config.prediction.ics > 0 and system.t_end > system.t_start:
        initials = training_batch(config, spec, sampler, config.prediction.ics, seed, 0, threads).states[:, 0]
        prediction = prediction_experiment(
            spec,
            est.smoothed_kernels(),
            sampler,
            initials,
            (system.t_start, system.t_end, system.t_final),
            config.prediction.ics,
            seed,
            nodes=config.prediction.nodes,
            large_n_factor=config.prediction.large_n_factor,
            R=mu.R,
            threads=threads,
        )
        report["prediction"] = prediction.to_dict()
    return report

"""Command-line entry point for the Interaction Kernel Learner."""

import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import structlog

from .benchmark import (
    evaluate_estimator,
    fit_estimator,
    noise_sweep,
    resolve_seed,
    run_benchmark,
    run_coercivity,
    training_batch,
)
from .config import get_settings
from .core.dynamics import backward_diff_velocities
from .core.errors import ConfigError, KernelLearnError
from .core.evaluation import fit_rate
from .core.hypothesis import choose_dimension
from .core.io import (
    curve_points,
    read_estimator,
    read_results,
    read_trajectories,
    write_estimator,
    write_json,
    write_trajectories,
)
from .core.measure import max_pairwise_distance
from .models.experiment import ExperimentConfig, LearningConfig, Profile, load_config


def configure_logging(level: str) -> None:
    """JSON logs on stderr at ``level``."""
    logging.basicConfig(format="%(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level.upper())
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


logger = structlog.get_logger()


def _int_list(value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'") from e


def _float_list(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'") from e


class Context:
    """Options shared by every subcommand."""

    def __init__(self, seed: Optional[int], profile: str, threads: int, out_dir: str):
        self.seed = seed
        self.profile = profile
        self.threads = threads
        self.out_dir = Path(out_dir)

    def load(self, path: str) -> ExperimentConfig:
        config = load_config(path, self.profile)
        if self.seed is not None:
            config = config.model_copy(update={"seed": self.seed})
        return config


pass_context = click.make_pass_decorator(Context)


@click.group()
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the experiment seed.")
@click.option(
    "--profile",
    type=click.Choice([p.value for p in Profile]),
    default=None,
    help="Experiment scale (default from KLEARN_PROFILE).",
)
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker processes (default from KLEARN_THREADS).")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--log-level", default=None, help="Logging level.")
@click.version_option(get_settings().app_version, prog_name="klearn")
@click.pass_context
def cli(ctx, seed, profile, threads, out_dir, log_level):
    """Learn interaction kernels of heterogeneous agent systems from trajectories."""
    settings = get_settings()
    configure_logging(log_level or settings.log_level)
    ctx.obj = Context(
        seed=seed,
        profile=profile or settings.profile,
        threads=threads or settings.threads,
        out_dir=out_dir or settings.out_dir,
    )


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@pass_context
def run(obj: Context, config_path):
    """Run a full benchmark and write its results bundle."""
    config = obj.load(config_path)
    summary = run_benchmark(config, obj.out_dir, threads=obj.threads)
    failed = sum(cell.status.value == "failed" for cell in summary.cells)
    report = {"out_dir": str(obj.out_dir), "cells": len(summary.cells), "failed": failed, "rates": summary.rates}
    click.echo(json.dumps(report, indent=2))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--M", "M", type=click.IntRange(min=1), default=None, help="Trajectories (default: largest M).")
@click.option("--trial", type=click.IntRange(min=0), default=0)
@pass_context
def generate(obj: Context, config_path, out_path, M, trial):
    """Simulate training trajectories and write them as CSV."""
    config = obj.load(config_path)
    spec, sampler = config.system.build_spec(), config.system.build_sampler()
    M = M or config.learning.M[-1]
    batch = training_batch(config, spec, sampler, M, resolve_seed(config), trial, obj.threads)
    batch.metadata["learning"] = config.learning.model_dump(mode="json")
    write_trajectories(batch, spec, out_path)
    click.echo(out_path)


@cli.command()
@click.option("--traj", "traj_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
@click.option("--partitions", type=click.IntRange(min=1), default=None, help="Subintervals per pair.")
@click.option("--degree", type=click.IntRange(0, 1), default=None)
@click.option("--R", "R", type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Save the normal system (.npz).")
@pass_context
def learn(obj: Context, traj_path, config_path, out_path, partitions, degree, R, checkpoint):
    """Learn an estimator from a trajectory CSV."""
    batch, spec = read_trajectories(traj_path)
    if not batch.has_velocities:
        batch = backward_diff_velocities(batch)
    if config_path:
        learning = obj.load(config_path).learning
    elif "learning" in batch.metadata:
        learning = LearningConfig.model_validate(batch.metadata["learning"])
    else:
        learning = None
    if partitions is None:
        if learning is None:
            raise click.UsageError("--partitions is required without a learning block in --config or the sidecar")
        partitions = choose_dimension(batch.M, learning.regularity, learning.multiplier)
    if degree is None:
        degree = learning.degree if learning else 0
    if R is None:
        R = learning.R if learning and learning.R else max_pairwise_distance(batch.states)
    overflow = learning.overflow.value if learning else "error"
    clip = learning.clip_to_support if learning else False
    est, ns = fit_estimator(spec, batch, degree, partitions, R, overflow, clip, obj.threads)
    if checkpoint:
        ns.save(checkpoint)
    out_path = Path(out_path) if out_path else obj.out_dir / "estimator.json"
    write_estimator(est, out_path)
    click.echo(str(out_path))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--estimator", "estimator_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
@click.option("--predict/--no-predict", default=True, help="Run the trajectory prediction experiment.")
@pass_context
def evaluate(obj: Context, config_path, estimator_path, out_path, predict):
    """Kernel and trajectory errors of a stored estimator."""
    config = obj.load(config_path)
    report = evaluate_estimator(config, read_estimator(estimator_path), threads=obj.threads, predict=predict)
    if out_path:
        write_json(report, out_path)
    click.echo(json.dumps(report, indent=2, default=float))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--partitions", default=None, help="Comma-separated partition counts.")
@pass_context
def coercivity(obj: Context, config_path, partitions):
    """Estimate the coercivity constant per partition count."""
    config = obj.load(config_path)
    estimates = run_coercivity(config, _int_list(partitions), out_dir=obj.out_dir, threads=obj.threads)
    click.echo(f"{'partitions':>10} {'lambda_min':>12} {'lambda_max':>12} {'retained':>8} {'pruned':>6}")
    for estimate in estimates:
        click.echo(
            f"{estimate.partitions:>10d} {estimate.lambda_min:>12.4e} {estimate.lambda_max:>12.4e} "
            f"{estimate.retained:>8d} {len(estimate.pruned):>6d}"
        )
        for k, value in sorted(estimate.block_lambda_min.items()):
            click.echo(f"{'':>10} block {k}: {value:.4e}")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", default="kernel_error", show_default=True)
@click.option("--window", default="", help="Window label for trajectory metrics.")
@click.option("--experiment", default=None, help="Restrict to one experiment.")
def rate(in_path, metric, window, experiment):
    """Fit error ~ M^-rate to a results CSV."""
    points = curve_points(read_results(in_path), metric, window, experiment)
    try:
        fit = fit_rate(points)
    except ValueError as e:
        raise click.UsageError(str(e)) from e
    click.echo(json.dumps({"metric": metric, "window": window, **fit.to_dict()}, indent=2))


@cli.command("noise-sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sigmas", required=True, help="Comma-separated noise levels.")
@pass_context
def noise_sweep_command(obj: Context, config_path, sigmas):
    """Learning rates at several noise levels."""
    config = obj.load(config_path)
    sweep = noise_sweep(config, _float_list(sigmas), obj.out_dir, threads=obj.threads)
    click.echo(json.dumps(sweep, indent=2))


@cli.command()
def schema():
    """Print the experiment config JSON schema."""
    click.echo(json.dumps(ExperimentConfig.model_json_schema(), indent=2))


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI; 0 on success, 1 on usage errors, 2 on runtime failures."""
    try:
        result = cli.main(args=argv, prog_name="klearn", standalone_mode=False)
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        return 1
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except KernelLearnError as e:
        logger.error("Run failed", error=str(e), error_type=type(e).__name__)
        click.echo(f"Error: {e}", err=True)
        return 2
    except ValueError as e:
        click.echo(f"Error: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())

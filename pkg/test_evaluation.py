"""Tests for trajectory errors, noise models, rate fits and the prediction experiment."""

import math

import numpy as np
import pytest

from src.core.dynamics import exact_velocities, generate_batch, simulate, snorm_squared
from src.core.evaluation import (
    add_noise,
    admissible_bound,
    fit_rate,
    gronwall_bound,
    jensen_check,
    prediction_experiment,
    prediction_grid,
    trajectory_error,
)
from src.core.kernels import Kernel, OpinionKernel, TabulatedKernel, ZeroKernel
from src.core.samplers import InitialSampler, SamplerLaw
from src.core.system import SystemSpec, TrajectoryBatch


@pytest.fixture
def opinion():
    spec = SystemSpec(d=1, type_sizes=(4,), kernels=[[OpinionKernel()]])
    sampler = InitialSampler.homogeneous(SamplerLaw("uniform_interval", lo=0.0, hi=2.0))
    return spec, sampler


@pytest.fixture
def observed(opinion):
    spec, sampler = opinion
    batch = generate_batch(spec, sampler, np.linspace(0.0, 0.5, 3), M=4, seed=9)
    return exact_velocities(spec, batch)


def test_fit_rate_recovers_power_law():
    points = [(M, 3.0 * M ** -0.4) for M in (10.0, 100.0, 1000.0, 10000.0)]
    fit = fit_rate(points)
    assert fit.rate == pytest.approx(0.4, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert fit.residual == pytest.approx(0.0, abs=1e-10)
    assert fit.to_dict()["points"] == 4


def test_fit_rate_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_rate([(10, 1.0), (100, 0.5)])
    with pytest.raises(ValueError):
        fit_rate([(10, 1.0), (100, 0.0), (1000, 0.1)])


def test_trajectory_error_is_max_snorm_in_window():
    spec = SystemSpec(d=1, type_sizes=(2,), kernels=[[ZeroKernel()]])
    times = np.array([0.0, 1.0, 2.0])
    truth = np.zeros((3, 2, 1))
    estimate = np.zeros((3, 2, 1))
    estimate[1] = 1.0
    estimate[2] = 0.5
    assert trajectory_error(spec, times, truth, estimate, (0.0, 2.0)) == pytest.approx(1.0)
    assert trajectory_error(spec, times, truth, estimate, (1.5, 2.0)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        trajectory_error(spec, times, truth, estimate, (3.0, 4.0))


def test_additive_and_multiplicative_noise(observed):
    rng = np.random.default_rng(0)
    additive = add_noise(observed, "additive", 0.1, rng)
    assert np.max(np.abs(additive.states - observed.states)) <= 0.1
    assert np.max(np.abs(additive.velocities - observed.velocities)) <= 0.1
    assert additive.metadata["noise"] == "additive"

    multiplicative = add_noise(observed, "multiplicative", 0.1, rng)
    gap = np.abs(multiplicative.states - observed.states)
    assert np.all(gap <= 0.1 * np.abs(observed.states) + 1e-15)

    assert add_noise(observed, "additive", 0.0, rng) is observed


def test_noise_errors(observed):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        add_noise(observed, "gaussian", 0.1, rng)
    with pytest.raises(ValueError):
        add_noise(observed, "additive", -0.1, rng)
    with pytest.raises(ValueError):
        add_noise(TrajectoryBatch(times=observed.times, states=observed.states), "additive", 0.1, rng)


def test_prediction_grid():
    assert prediction_grid(0.0, 1.0, 2.0, 200).size == 399
    assert prediction_grid(0.0, 1.0, 1.0, 200).size == 200


def test_jensen_inequality(opinion, observed):
    spec, _ = opinion
    assert jensen_check(spec, spec.kernels, observed).energy == pytest.approx(0.0, abs=1e-20)
    for est in ([[ZeroKernel()]], [[TabulatedKernel([0.0, 10.0], [0.5, 0.5])]]):
        check = jensen_check(spec, est, observed)
        assert check.energy > 0
        assert check.holds


def test_gronwall_bound_vanishes_for_exact_kernels(opinion, observed):
    spec, _ = opinion
    states = observed.states[0]
    assert gronwall_bound(spec, spec.kernels, observed.times, states, S=1.0) == 0.0
    assert gronwall_bound(spec, [[ZeroKernel()]], observed.times, states, S=1.0) > 0.0


class ScaledOpinionKernel(Kernel):
    name = "scaled-opinion"

    def __init__(self, factor: float):
        self.factor = factor

    def _evaluate(self, r):
        return self.factor * OpinionKernel()(r)


def test_gronwall_bound_holds_for_perturbed_kernel(opinion):
    spec, _ = opinion
    estimate = [[ScaledOpinionKernel(1.0 + 1e-3)]]
    times = np.linspace(0.0, 0.05, 21)
    initial = np.array([[0.0], [0.6], [1.2], [1.9]])
    truth = simulate(spec, initial, times, rtol=1e-11, atol=1e-13)
    predicted = simulate(spec.with_kernels(estimate), initial, times, rtol=1e-11, atol=1e-13)
    gap = float(np.max(snorm_squared(spec, predicted - truth)))
    S = admissible_bound(spec, estimate, 3.0)
    bound = gronwall_bound(spec, estimate, times, truth, S)
    assert 0.0 < gap <= bound
    assert math.isfinite(bound)


def test_prediction_with_true_kernels(opinion, observed):
    spec, sampler = opinion
    report = prediction_experiment(
        spec,
        spec.kernels,
        sampler,
        observed.states[:, 0],
        times=(0.0, 0.5, 1.0),
        ics=2,
        seed=1,
        nodes=10,
        large_n_factor=2,
        R=3.0,
    )
    assert set(report.errors) == {"training", "random", "large_n"}
    assert set(report.windows) == {"train", "future"}
    for ic_class in report.errors:
        assert report.failures[ic_class] == 0
        for window in report.windows:
            assert report.errors[ic_class][window] == [0.0, 0.0]
    assert report.bound_violations == 0
    summary = report.to_dict()["summary"]["random"]["future"]
    assert summary == {"mean": 0.0, "std": 0.0, "count": 2}


def test_prediction_separates_wrong_kernel(opinion, observed):
    spec, sampler = opinion
    report = prediction_experiment(
        spec,
        [[ZeroKernel()]],
        sampler,
        observed.states[:, 0],
        times=(0.0, 0.5, 1.0),
        ics=2,
        seed=1,
        nodes=10,
    )
    assert report.summary("random", "future").mean > 0
    assert math.isnan(report.summary("missing", "train").mean)

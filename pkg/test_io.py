"""Tests for trajectory, estimator, measure and results files."""

import math

import numpy as np
import pandas as pd
import pytest

from src.core.errors import ShapeMismatchError
from src.core.hypothesis import Estimator, HypothesisSpace, smooth_estimator
from src.core.io import (
    curve_points,
    figure_data,
    read_estimator,
    read_results,
    read_trajectories,
    sidecar_path,
    write_estimator,
    write_measure,
    write_results,
    write_trajectories,
)
from src.core.kernels import OpinionKernel, PowerKernel, ZeroKernel
from src.core.measure import measure_from_states, uniform_edges
from src.core.system import SystemSpec, TrajectoryBatch


@pytest.fixture
def spec():
    return SystemSpec(
        d=2,
        type_sizes=(2, 1),
        kernels=[[OpinionKernel(), PowerKernel(0.0, -2.0, -2.0, 1.0)], [ZeroKernel(), ZeroKernel()]],
    )


def test_trajectory_roundtrip(spec, tmp_path):
    rng = np.random.default_rng(0)
    states = rng.standard_normal((2, 3, 3, 2))
    batch = TrajectoryBatch(
        times=[0.0, 0.1, 0.2],
        states=states,
        velocities=rng.standard_normal(states.shape),
        seed=123,
        metadata={"namespace": "train"},
    )
    path = write_trajectories(batch, spec, tmp_path / "traj.csv")
    assert sidecar_path(path).exists()

    loaded, loaded_spec = read_trajectories(path)
    np.testing.assert_array_equal(loaded.states, batch.states)
    np.testing.assert_array_equal(loaded.velocities, batch.velocities)
    np.testing.assert_array_equal(loaded.times, batch.times)
    assert loaded.seed == 123
    assert loaded.metadata == {"namespace": "train"}
    assert loaded_spec.to_config() == spec.to_config()


def test_truncated_trajectory_file_is_rejected(spec, tmp_path):
    batch = TrajectoryBatch(times=[0.0, 0.1], states=np.zeros((1, 2, 3, 2)))
    path = write_trajectories(batch, spec, tmp_path / "traj.csv")
    frame = pd.read_csv(path)
    frame.iloc[:-1].to_csv(path, index=False)
    with pytest.raises(ShapeMismatchError):
        read_trajectories(path)


def test_estimator_roundtrip(tmp_path):
    space = HypothesisSpace.uniform(K=1, R=2.0, degree=1, partitions=2)
    est = smooth_estimator(Estimator(space=space, coeffs=[0.1, 0.2, 0.3, 0.4], diagnostics={"rank": 4}), 0.5)
    path = write_estimator(est, tmp_path / "est.json")
    loaded = read_estimator(path)
    assert loaded.space == space
    np.testing.assert_array_equal(loaded.coeffs, est.coeffs)
    assert loaded.diagnostics == {"rank": 4}
    grid = np.linspace(0.0, 3.0, 31)
    np.testing.assert_array_equal(loaded.smoothed_kernels()[0][0](grid), est.smoothed_kernels()[0][0](grid))


def test_measure_file_skips_undefined_pairs(spec, tmp_path):
    states = np.random.default_rng(1).uniform(size=(2, 1, 3, 2))
    mu = measure_from_states(spec, states, uniform_edges(2.0, 5))
    frame = pd.read_csv(write_measure(mu, tmp_path / "measure.csv"))
    assert len(frame) == 3 * 5
    assert {(k, kp) for k, kp in zip(frame["k"], frame["kp"])} == {(0, 0), (0, 1), (1, 0)}
    assert frame.groupby(["k", "kp"])["mass"].sum().tolist() == pytest.approx([1.0, 1.0, 1.0])


def results():
    rows = []
    for M, value in [(16, 0.4), (32, 0.3), (64, 0.2)]:
        for trial, jitter in enumerate((-0.01, 0.01)):
            rows.append({"experiment": "demo", "M": M, "trial": trial, "metric": "kernel_error", "value": value + jitter})
            rows.append(
                {"experiment": "demo", "M": M, "trial": trial, "metric": "tm_error_random", "window": "future", "value": 1.0}
            )
    rows.append({"experiment": "demo", "M": 64, "trial": 2, "metric": "kernel_error", "value": math.nan})
    return rows


def test_results_roundtrip_keeps_nan_and_windows(tmp_path):
    path = write_results(results(), tmp_path / "results.csv")
    frame = read_results(path)
    assert len(frame) == 13
    assert frame["value"].isna().sum() == 1
    assert set(frame["window"]) == {"", "future"}


def test_curve_points_average_trials_and_skip_nan(tmp_path):
    frame = read_results(write_results(results(), tmp_path / "results.csv"))
    points = curve_points(frame, "kernel_error")
    assert [M for M, _ in points] == [16.0, 32.0, 64.0]
    assert [value for _, value in points] == pytest.approx([0.4, 0.3, 0.2])
    assert curve_points(frame, "tm_error_random", window="future", experiment="demo")[0] == (16.0, 1.0)
    assert curve_points(frame, "tm_error_random") == []
    assert curve_points(frame, "kernel_error", experiment="other") == []


def test_figure_data_summarizes_cells(tmp_path):
    frame = read_results(write_results(results(), tmp_path / "results.csv"))
    summary = figure_data(frame)
    row = summary[(summary["metric"] == "kernel_error") & (summary["M"] == 64)].iloc[0]
    assert row["mean"] == pytest.approx(0.2)
    assert row["count"] == 2

"""Tests for hypothesis spaces, estimators and smoothing."""

import numpy as np
import pytest

from src.core.errors import HypothesisSpaceError
from src.core.hypothesis import (
    Estimator,
    HypothesisSpace,
    choose_dimension,
    eval_basis,
    mean_estimator,
    smooth_estimator,
    support_intervals,
)
from src.core.kernels import OpinionKernel, ZeroKernel
from src.core.system import SystemSpec


def test_dimension_rule():
    assert choose_dimension(1024, 1, 60) == 317
    assert choose_dimension(2, 1, 1e-6) == 1
    with pytest.raises(ValueError):
        choose_dimension(1, 1, 60)


def test_locate_includes_right_end():
    space = HypothesisSpace.uniform(K=1, R=1.0, degree=1, partitions=4)
    j, t = space.locate(0, 0, np.array([0.0, 0.3, 1.0]))
    np.testing.assert_array_equal(j, [0, 1, 3])
    np.testing.assert_allclose(t, [0.0, 0.2, 1.0])


def test_locate_overflow_modes():
    space = HypothesisSpace.uniform(K=1, R=1.0, degree=0, partitions=4)
    with pytest.raises(HypothesisSpaceError):
        space.locate(0, 0, np.array([1.5]))
    j, t = space.locate(0, 0, np.array([1.5]), overflow="clamp")
    assert j[0] == 3
    assert t[0] == pytest.approx(1.0)


def test_invalid_spaces():
    with pytest.raises(HypothesisSpaceError):
        HypothesisSpace.uniform(K=1, R=1.0, degree=2, partitions=4)
    with pytest.raises(HypothesisSpaceError):
        HypothesisSpace.uniform(K=1, R=1.0, degree=0, partitions=0)
    with pytest.raises(HypothesisSpaceError):
        HypothesisSpace(K=1, degree=0, partitions=2, intervals=(((1.0, 1.0),),))


def test_degree_one_basis_values():
    space = HypothesisSpace.uniform(K=1, R=2.0, degree=1, partitions=2)
    values = space.basis_values(0, 0, [0.5, 1.5, 3.0])
    np.testing.assert_allclose(
        values,
        [
            [1.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.5],
            [0.0, 0.0, 0.0, 0.0],
        ],
    )
    assert eval_basis(space, (0, 0), 3, 1.5) == pytest.approx(0.5)
    with pytest.raises(HypothesisSpaceError):
        eval_basis(space, (0, 0), 4, 1.0)


def test_stacked_indices_roundtrip():
    space = HypothesisSpace.uniform(K=2, R=1.0, degree=1, partitions=3)
    assert space.n == 24
    assert space.offset(1, 0) == 12
    for j in range(space.n):
        assert space.to_stacked(*space.from_stacked(j)) == j
    with pytest.raises(HypothesisSpaceError):
        space.from_stacked(space.n)


def test_space_dict_roundtrip():
    space = HypothesisSpace(K=2, degree=0, partitions=5, intervals=(((0.0, 1.0), (0.5, 2.0)), ((0.0, 3.0), (0.1, 0.2))))
    assert HypothesisSpace.from_dict(space.to_dict()) == space


def test_raw_estimator_is_zero_outside_interval():
    space = HypothesisSpace(K=1, degree=1, partitions=2, intervals=(((1.0, 3.0),),))
    est = Estimator(space=space, coeffs=[1.0, 2.0, 3.0, -1.0])
    kernel = est.kernel(0, 0)
    np.testing.assert_allclose(kernel(np.array([0.5, 1.0, 1.5, 2.0, 3.0, 3.5])), [0.0, 1.0, 2.0, 3.0, 2.0, 0.0])


def test_smoothing_interpolates_and_extrapolates_constant():
    space = HypothesisSpace.uniform(K=1, R=2.0, degree=1, partitions=2)
    est = Estimator(space=space, coeffs=[0.0, 2.0, 2.0, -1.0])
    smoothed = smooth_estimator(est, grid_step=0.5)
    phi = smoothed.smoothed_kernels()[0][0]
    grid = np.linspace(0.0, 2.0, 201)
    np.testing.assert_allclose(phi(grid), est.kernel(0, 0)(grid), atol=1e-12)
    assert phi(5.0) == pytest.approx(1.0)
    np.testing.assert_array_equal(smoothed.coeffs, est.coeffs)
    with pytest.raises(ValueError):
        est.smoothed_kernels()
    with pytest.raises(ValueError):
        smooth_estimator(est, grid_step=0.0)


def test_coefficient_shape_is_checked():
    space = HypothesisSpace.uniform(K=1, R=1.0, degree=0, partitions=3)
    with pytest.raises(HypothesisSpaceError):
        Estimator(space=space, coeffs=np.zeros(4))


def test_mean_estimator():
    space = HypothesisSpace.uniform(K=1, R=1.0, degree=0, partitions=2)
    mean = mean_estimator([Estimator(space, [1.0, 3.0]), Estimator(space, [3.0, 5.0])])
    np.testing.assert_allclose(mean.coeffs, [2.0, 4.0])
    other = HypothesisSpace.uniform(K=1, R=2.0, degree=0, partitions=2)
    with pytest.raises(HypothesisSpaceError):
        mean_estimator([Estimator(space, [1.0, 3.0]), Estimator(other, [1.0, 3.0])])


def test_support_intervals():
    spec = SystemSpec(d=1, type_sizes=(2, 1), kernels=[[ZeroKernel()] * 2] * 2)
    states = np.array([[0.0], [1.0], [3.0]]).reshape(1, 1, 3, 1)
    intervals = support_intervals(spec, states, R=10.0)
    # a single distance per diagonal pair collapses, so it falls back to [0, R]
    assert intervals[0][0] == (0.0, 10.0)
    assert intervals[1][1] == (0.0, 10.0)
    assert intervals[0][1] == (2.0, 3.0)
    assert intervals[1][0] == (2.0, 3.0)


@pytest.mark.parametrize("partitions", [10, 100, 1000])
def test_piecewise_constant_approximation_of_opinion_kernel(partitions):
    R = 10.0
    space = HypothesisSpace.uniform(K=1, R=R, degree=0, partitions=partitions)
    r = np.linspace(0.0, R, partitions * 50 + 1)
    values = OpinionKernel()(r)
    j, _ = space.locate(0, 0, r)
    highs = np.full(partitions, -np.inf)
    lows = np.full(partitions, np.inf)
    np.maximum.at(highs, j, values)
    np.minimum.at(lows, j, values)
    # midrange is the best constant on each subinterval
    midrange = Estimator(space=space, coeffs=0.5 * (highs + lows)).kernel(0, 0)
    sup_error = np.max(np.abs(midrange(r) - values))
    assert sup_error == pytest.approx(np.max(highs - lows) / 2)
    assert sup_error <= 5 * np.pi * R / partitions

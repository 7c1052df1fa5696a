"""Tests for the built-in interaction kernels and the kernel registry."""

import math

import numpy as np
import pytest

from src.core.errors import ConfigError
from src.core.kernels import (
    LennardJonesKernel,
    OpinionKernel,
    PowerKernel,
    TabulatedKernel,
    ZeroKernel,
    admissible_constant,
    build_kernel,
    lipschitz_estimate,
    make_lj_kernel,
    make_truncated_power_kernel,
    opinion_kernel,
)


def test_opinion_kernel_branches():
    """Plateaus and ramps of the opinion kernel."""
    phi = OpinionKernel()
    assert phi(0.0) == pytest.approx(0.4)
    assert phi(0.8) == pytest.approx(1.0)
    assert phi(1.0) == pytest.approx(0.5)
    assert phi(1.2) == 0.0
    assert isinstance(phi(0.3), float)
    assert phi(np.array([0.0, 2.0])).shape == (2,)


def test_opinion_kernel_lipschitz_constant():
    assert lipschitz_estimate(OpinionKernel(), 0.0, 1.2) == pytest.approx(5 * math.pi, rel=1e-3)


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        OpinionKernel()(-0.1)


@pytest.mark.parametrize("r", [math.nan, math.inf, [0.5, math.nan]])
def test_non_finite_distance_rejected(r):
    with pytest.raises(ValueError, match="non-finite"):
        OpinionKernel()(r)
    with pytest.raises(ValueError, match="non-finite"):
        ZeroKernel()(r)


@pytest.mark.parametrize(
    "kernel",
    [
        PowerKernel(1.0, -1.0, -2.0, 0.4),
        PowerKernel(0.0, 3.5, -3.0, 0.4),
        LennardJonesKernel(4, 1, 10.0, 0.8, 0.68),
        LennardJonesKernel(8, 2, 1.5, 0.5, 0.4),
    ],
)
def test_truncated_kernels_match_value_and_slope(kernel):
    """The exponential cap joins the closed form with matching value and slope."""
    r_t = kernel.r_trunc
    base = float(kernel.base(np.array([r_t]))[0])
    assert kernel(r_t) == pytest.approx(base, rel=1e-12)

    h = 1e-6
    left = (kernel(r_t) - kernel(r_t - h)) / h
    right = (kernel(r_t + h) - kernel(r_t)) / h
    assert left == pytest.approx(right, rel=1e-3)
    assert np.all(np.isfinite(kernel(np.linspace(0.0, 3.0, 301))))


def test_lennard_jones_kernel_is_potential_derivative_over_r():
    kernel = LennardJonesKernel(5, 2, 5.0, 1.0, 0.8)
    r, h = 1.3, 1e-6
    derivative = (kernel.potential(r + h) - kernel.potential(r - h)) / (2 * h)
    assert kernel(r) == pytest.approx(derivative / r, rel=1e-6)


def test_lennard_jones_parameter_checks():
    with pytest.raises(ValueError):
        LennardJonesKernel(1, 2, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        LennardJonesKernel(4, 1, 1.0, 0.5, 0.6)


def test_registry_builds_and_echoes_kernels():
    kernel = build_kernel("power", {"c0": 0.0, "c1": -2.0, "exp": -2.0, "r_trunc": 1.0})
    assert isinstance(kernel, PowerKernel)
    config = kernel.to_config()
    assert config["name"] == "power"

    rebuilt = build_kernel(config["name"], config["params"])
    grid = np.linspace(0.0, 5.0, 51)
    np.testing.assert_array_equal(rebuilt(grid), kernel(grid))

    assert isinstance(build_kernel("zero"), ZeroKernel)
    assert build_kernel("opinion").to_config() == {"name": "opinion", "params": {}}


def test_registry_errors():
    with pytest.raises(ConfigError):
        build_kernel("no-such-kernel")
    with pytest.raises(ConfigError):
        build_kernel("lj", {"p": 1, "q": 2, "eps": 1.0, "r_m": 1.0, "r_trunc": 0.5})
    with pytest.raises(ConfigError):
        build_kernel("power", {"c0": 1.0})


def test_tabulated_kernel_interpolates_and_extrapolates_constant():
    kernel = TabulatedKernel([0.0, 1.0, 2.0], [0.0, 2.0, 1.0])
    assert kernel(0.5) == pytest.approx(1.0)
    assert kernel(1.5) == pytest.approx(1.5)
    assert kernel(10.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TabulatedKernel([0.0, 0.0], [1.0, 1.0])


def test_admissible_constant():
    assert admissible_constant(ZeroKernel(), 5.0) == 0.0
    constant = TabulatedKernel([0.0, 10.0], [2.0, 2.0])
    assert admissible_constant(constant, 5.0) == pytest.approx(2.0)


def test_opinion_kernel_function():
    assert opinion_kernel(0.3) == pytest.approx(0.4)
    assert opinion_kernel(1.0) == pytest.approx(0.5)
    assert opinion_kernel(2.0) == 0.0


def test_power_kernel_cap_parameters():
    prey = make_truncated_power_kernel(1.0, -1.0, -2.0, 0.4)
    assert prey.b == pytest.approx(125 / 21, rel=1e-12)
    assert prey.a == pytest.approx(-5.25 * math.exp(0.4 * 125 / 21), rel=1e-12)
    assert prey.a == pytest.approx(-56.78, abs=0.01)

    predator = make_truncated_power_kernel(0.0, -2.0, -2.0, 1.0)
    assert predator.b == pytest.approx(2.0)
    assert predator.a == pytest.approx(-2.0 * math.e ** 2)

    with pytest.raises(ValueError):
        make_truncated_power_kernel(1.0, -1.0, -2.0, 1.0)


@pytest.mark.parametrize("p,q,eps,r_m,r_trunc", [(4, 1, 10.0, 0.8, 0.68), (8, 2, 1.5, 0.5, 0.4), (5, 2, 5.0, 1.0, 0.8)])
def test_lennard_jones_minimum_and_cap_slope(p, q, eps, r_m, r_trunc):
    kernel = make_lj_kernel(p, q, eps, r_m, r_trunc)
    assert kernel.potential(r_m) == pytest.approx(-eps, rel=1e-12)
    assert kernel(r_m) == pytest.approx(0.0, abs=1e-9)
    r_t = np.array([r_trunc])
    assert kernel.cap(r_t)[0] == pytest.approx(kernel.base(r_t)[0], rel=1e-10)
    assert kernel.cap_derivative(r_t)[0] == pytest.approx(kernel.base_derivative(r_t)[0], rel=1e-8)

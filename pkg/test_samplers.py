"""Tests for initial-condition laws."""

import numpy as np
import pytest
from scipy import stats

from src.core.kernels import ZeroKernel
from src.core.samplers import InitialSampler, SamplerLaw, sample_initial
from src.core.system import SystemSpec


def test_predator_swarm_initial_state():
    spec = SystemSpec(d=2, type_sizes=(9, 1), kernels=[[ZeroKernel()] * 2] * 2)
    sampler = InitialSampler(
        laws=(SamplerLaw("uniform_disk", radius=0.5), SamplerLaw("uniform_annulus", r_in=0.8, r_out=1.0))
    )
    rng = np.random.default_rng(0)
    for _ in range(200):
        state = sample_initial(sampler, spec, rng)
        assert state.shape == (10, 2)
        norms = np.linalg.norm(state, axis=1)
        assert np.all(norms[:9] <= 0.5)
        assert np.all((norms[9] >= 0.8) & (norms[9] <= 1.0))


def test_disk_radius_is_uniform_in_area():
    law = SamplerLaw("uniform_disk", radius=2.0)
    radii = np.linalg.norm(law.sample(100000, 2, np.random.default_rng(1)), axis=1)
    assert stats.kstest(radii, lambda r: np.clip(r / 2.0, 0.0, 1.0) ** 2).pvalue > 1e-3


def test_standard_gaussian_mean():
    samples = SamplerLaw("standard_gaussian").sample(100000, 3, np.random.default_rng(2))
    assert np.all(np.abs(samples.mean(axis=0)) < 0.02)


def test_exchangeable_gaussian_difference_variance():
    """x_i - x_j cancels the shared offset, leaving variance 2 * lam."""
    law = SamplerLaw("exchangeable_gaussian", lam=2.0)
    rng = np.random.default_rng(3)
    pairs = np.array([law.sample(2, 1, rng)[:, 0] for _ in range(20000)])
    assert np.var(pairs[:, 0] - pairs[:, 1]) == pytest.approx(4.0, rel=0.1)
    assert np.var(pairs[:, 0]) == pytest.approx(3.0, rel=0.1)


def test_uniform_interval_bounds():
    samples = SamplerLaw("uniform_interval", lo=0.0, hi=8.0).sample(1000, 1, np.random.default_rng(4))
    assert samples.min() >= 0.0
    assert samples.max() < 8.0


def test_invalid_laws():
    with pytest.raises(ValueError):
        SamplerLaw("uniform_annulus", r_in=1.0, r_out=0.8)
    with pytest.raises(ValueError):
        SamplerLaw("no-such-law")
    spec = SystemSpec(d=1, type_sizes=(2, 2), kernels=[[ZeroKernel()] * 2] * 2)
    with pytest.raises(ValueError):
        sample_initial(InitialSampler.homogeneous(SamplerLaw("standard_gaussian")), spec, np.random.default_rng(0))


def test_config_roundtrip():
    sampler = InitialSampler(laws=(SamplerLaw("uniform_disk", radius=0.5), SamplerLaw("exchangeable_gaussian", lam=0.5)))
    assert InitialSampler.from_config(sampler.to_config()) == sampler

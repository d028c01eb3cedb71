import math

import numpy as np
import pytest
from scipy import stats

from planted_reductions.errors import ParameterError
from planted_reductions.kernels import (
    GaussianizeParams,
    attenuate_gauss,
    attenuate_sign,
    clone_depth,
    clone_scale,
    clone_values,
    discretize_bias,
    discretize_entry,
    discretize_many,
    gauss_clone,
    gauss_clone_many,
    gaussianize_entry,
    gaussianize_many,
)
from planted_reductions.models import random_signs
from planted_reductions.rng import make_rng


def test_kernels_gaussianize_constants() -> None:
    params = GaussianizeParams(delta=0.1, n=10**4, C=1.0)
    assert params.radius == pytest.approx(math.sqrt(6 * math.log(10**4) + 2 * math.log(5)))
    assert params.mu == pytest.approx(0.00654, rel=1e-3)
    assert params.iterations == 56


def test_kernels_gaussianize_rejects_large_bias() -> None:
    with pytest.raises(ValueError):
        GaussianizeParams(delta=0.5, n=100)
    with pytest.raises(ValueError):
        GaussianizeParams(delta=0.0, n=100)


def test_kernels_gaussianize_planted_law(rng: np.random.Generator) -> None:
    params = GaussianizeParams(delta=0.3, n=10**4)
    values, fallbacks = gaussianize_many(random_signs(100000, rng, 0.3), params, rng)
    assert fallbacks == 0
    assert stats.kstest(values, "norm", args=(params.mu,)).statistic < 0.01


def test_kernels_gaussianize_null_law(rng: np.random.Generator) -> None:
    params = GaussianizeParams(delta=0.3, n=10**4)
    values, _ = gaussianize_many(random_signs(100000, rng), params, rng)
    mu = params.mu

    def mixture(y: np.ndarray) -> np.ndarray:
        return 0.5 * stats.norm.cdf(y - mu) + 0.5 * stats.norm.cdf(y + mu)

    assert stats.kstest(values, mixture).statistic < 0.01


def test_kernels_gaussianize_entry(rng: np.random.Generator) -> None:
    params = GaussianizeParams(delta=0.2, n=100)
    assert abs(gaussianize_entry(1, params, rng)) <= params.radius
    with pytest.raises(ParameterError):
        gaussianize_entry(0, params, rng)


def test_kernels_discretize(rng: np.random.Generator) -> None:
    assert discretize_entry(2.5, rng) == 1
    assert discretize_entry(-0.1, rng) == -1
    assert set(discretize_many(np.zeros(100), rng).tolist()) <= {-1, 1}
    assert discretize_bias(0.0) == 0.0
    assert discretize_bias(0.5) == pytest.approx(0.38292, abs=1e-5)
    assert discretize_bias(40.0) == pytest.approx(1.0)


def test_kernels_discretize_bias_matches_samples(rng: np.random.Generator) -> None:
    signs = discretize_many(0.5 + rng.standard_normal(10**6), rng)
    bias = discretize_bias(0.5)
    assert abs(signs.mean() - bias) < 4 * math.sqrt((1 - bias**2) / 10**6)


def test_kernels_gauss_clone() -> None:
    assert gauss_clone(0.0, make_rng(0), z=0.0) == (0.0, 0.0)
    first, second = gauss_clone(1.0, make_rng(0), z=1.0)
    assert first == pytest.approx(0.0)
    assert second == pytest.approx(math.sqrt(2))


def test_kernels_clone_moments(rng: np.random.Generator) -> None:
    y = 1.0 + rng.standard_normal(100000)
    copies = clone_values(y, 2, rng)
    assert copies.shape == (2, 100000)
    for row in copies:
        assert abs(row.mean() - 1 / math.sqrt(2)) < 0.015
        assert abs(row.var() - 1) < 0.02
    assert abs(np.corrcoef(copies[0], copies[1])[0, 1]) < 0.015


def test_kernels_clone_many(rng: np.random.Generator) -> None:
    assert clone_depth(1) == 0
    assert clone_depth(3) == 2
    assert clone_depth(4) == 2
    assert clone_scale(4) == pytest.approx(0.5)
    four = clone_values(1.0 + rng.standard_normal(100000), 4, rng)
    assert four.shape == (4, 100000)
    assert np.all(np.abs(four.mean(axis=1) - 0.5) < 0.015)
    pair = gauss_clone_many(0.7, 2, make_rng(5))
    assert pair.tolist() == pytest.approx(list(gauss_clone(0.7, make_rng(5))))
    with pytest.raises(ParameterError):
        gauss_clone_many(0.7, 1, rng)


def test_kernels_attenuation(rng: np.random.Generator) -> None:
    signs = attenuate_sign(random_signs(100000, rng, 0.6), 0.5, rng)
    assert abs(signs.mean() - 0.3) < 5 * math.sqrt(0.91 / 100000)
    values = attenuate_gauss(1.0 + rng.standard_normal(100000), 0.5, rng)
    assert abs(values.mean() - 0.5) < 0.015
    assert abs(values.var() - 1) < 0.02

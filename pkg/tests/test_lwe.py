import math
from typing import Any

import numpy as np
import pytest
from scipy import stats

from planted_reductions.errors import AdmissibilityError, ParameterError
from planted_reductions.lwe import (
    NoiseFamily,
    Verdict,
    _aggregate_equations,
    aggregate,
    centered_lift,
    collision_detect,
    collision_plan,
    collision_sample_size,
    collision_statistics,
    collision_threshold,
    combination_pairs,
    discr_eqcomb_lwe,
    lwe_regime,
    lwe_view_spec,
    noise_difference_law,
    normalize_equations,
    plurality_delta,
    poisson_cap,
    residuals,
    sample_lwe,
    signal_bits,
    threshold_from_count,
    xor_as_lwe,
)
from planted_reductions.models import (
    SIGN_ALPHABET,
    Family,
    Instance,
    ModelSpec,
    NoiseKind,
    NoiseParams,
    sample_planted,
    sample_signal,
)
from planted_reductions.settings import settings


def _lwe(k: int, n: int, q: int, m: int, noise: NoiseParams, **fields: Any) -> ModelSpec:
    return ModelSpec(family=Family.LWE, k=k, n=n, epsilon=0, q=q, noise=noise, m_value=m, **fields)


UNIFORM = NoiseParams(kind=NoiseKind.UNIFORM, delta=0.3)
GAUSS = NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=1.0)
BOUNDED = NoiseParams(kind=NoiseKind.BOUNDED, pmf={-1: 1 / 3, 0: 1 / 3, 1: 1 / 3})


def test_lwe_noise_differences() -> None:
    assert NoiseFamily(params=UNIFORM, q=7).difference().params.delta == pytest.approx(0.09)
    wide = NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=2.0)
    assert noise_difference_law(NoiseFamily(params=wide, q=11)).params.s == pytest.approx(2 * math.sqrt(2))
    bounded = NoiseFamily(params=BOUNDED, q=7).difference()
    expected = {-2: 1 / 9, -1: 2 / 9, 0: 3 / 9, 1: 2 / 9, 2: 1 / 9}
    assert bounded.params.pmf == pytest.approx(expected)


def test_lwe_uniform_difference_is_exact() -> None:
    family = NoiseFamily(params=UNIFORM, q=7)
    pmf = family.pmf()
    convolved = np.array([sum(pmf[a] * pmf[(a - d) % 7] for a in range(7)) for d in range(7)])
    assert family.difference().pmf() == pytest.approx(convolved)


def test_lwe_pmfs_sum_to_one() -> None:
    for params in (UNIFORM, GAUSS, BOUNDED):
        family = NoiseFamily(params=params, q=5)
        assert family.pmf().sum() == pytest.approx(1.0)
        assert 1 / 5 <= family.collision_probability() <= 1


def test_lwe_noise_params_validation() -> None:
    with pytest.raises(ValueError):
        NoiseParams(kind=NoiseKind.UNIFORM, delta=1.5)
    with pytest.raises(ValueError):
        NoiseParams(kind=NoiseKind.DISCRETE_GAUSS)
    with pytest.raises(ValueError):
        NoiseParams(kind=NoiseKind.BOUNDED, pmf={0: 0.5})


def test_lwe_aggregation_laws() -> None:
    gauss = NoiseFamily(params=GAUSS, q=7)
    assert gauss.aggregated(1) == gauss
    assert gauss.aggregated(4).params.s == pytest.approx(1 / math.sqrt(2))
    bounded = NoiseFamily(params=BOUNDED, q=7)
    assert bounded.aggregated(8) == bounded
    with pytest.raises(ParameterError):
        gauss.aggregated(0)
    assert plurality_delta(1.0, 5, 3) == pytest.approx(1.0)
    assert plurality_delta(0.0, 5, 3) < 0.05
    assert plurality_delta(0.5, 5, 3) > 0.5


def test_lwe_aggregate(rng: np.random.Generator) -> None:
    assert aggregate(NoiseFamily(params=UNIFORM, q=5), [3, 3, 1], rng) == 3
    assert aggregate(NoiseFamily(params=GAUSS, q=7), [1, 1], rng) == 1
    assert aggregate(NoiseFamily(params=GAUSS, q=101), [100, 1], rng) == 0
    assert aggregate(NoiseFamily(params=GAUSS, q=101), [50, 52], rng) == 51
    assert aggregate(NoiseFamily(params=BOUNDED, q=7), [4, 2, 2], rng) == 4
    with pytest.raises(ParameterError):
        aggregate(NoiseFamily(params=GAUSS, q=7), [], rng)


@pytest.mark.parametrize("value", [0, 25, 50, 51, 100])
def test_lwe_aggregate_across_the_modulus(value: int, rng: np.random.Generator) -> None:
    family = NoiseFamily(params=NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=4.0), q=101)
    errors = []
    for _ in range(300):
        observed = (value + family.sample(16, rng)) % 101
        errors.append(centered_lift(np.array([aggregate(family, observed, rng) - value]), 101)[0])
    assert np.mean(np.abs(errors)) < 3
    assert np.mean(np.abs(errors) > 10) < 0.02


def test_lwe_aggregation_drops_short_groups(rng: np.random.Generator) -> None:
    family = NoiseFamily(params=GAUSS, q=7)
    keys = np.stack([np.arange(200), np.arange(200) + 200], axis=1)
    idx = np.repeat(keys, 3, axis=0)
    coef = np.ones_like(idx)
    pair_ids = np.arange(2 * idx.shape[0]).reshape(-1, 2)
    out_idx, _, out_vals, parents, short = _aggregate_equations(
        idx, coef, np.zeros(idx.shape[0], dtype=np.int64), pair_ids, family, 5, False, rng
    )
    assert out_idx.shape[0] == 0 and out_vals.shape[0] == 0
    assert parents.shape == (0, 10)
    assert short > 0


def test_lwe_aggregation_uses_exact_group_size(rng: np.random.Generator) -> None:
    family = NoiseFamily(params=GAUSS, q=7)
    keys = np.stack([np.arange(100), np.arange(100) + 100], axis=1)
    idx = np.repeat(keys, 12, axis=0)
    pair_ids = np.arange(2 * idx.shape[0]).reshape(-1, 2)
    vals = np.full(idx.shape[0], 3, dtype=np.int64)
    out_idx, _, out_vals, parents, short = _aggregate_equations(
        idx, np.ones_like(idx), vals, pair_ids, family, 4, False, rng
    )
    assert out_idx.shape[0] > 0
    assert parents.shape == (out_idx.shape[0], 8)
    assert (parents >= 0).all()
    assert np.unique(parents).shape[0] == parents.size
    assert (out_vals == 3).all()


def test_lwe_centered_lift() -> None:
    assert centered_lift(np.array([0, 1, 2, 3, 4]), 5).tolist() == [0, 1, 2, -2, -1]
    assert centered_lift(np.array([-1, 7]), 7).tolist() == [-1, 0]


def test_lwe_residuals_follow_noise(rng: np.random.Generator) -> None:
    wide = NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=3.0)
    spec = _lwe(3, 20, 7, 5000, wide)
    signal = sample_signal(20, 7, rng)
    instance = sample_lwe(spec, signal, rng)
    assert np.all(instance.coef >= 1) and np.all(instance.coef < 7)
    counts = np.bincount(residuals(instance, signal), minlength=7)
    expected = NoiseFamily(params=wide, q=7).pmf() * instance.m
    assert stats.chisquare(counts, expected).pvalue > 1e-4


def test_lwe_sample_rejects_wrong_signal(rng: np.random.Generator) -> None:
    with pytest.raises(ParameterError):
        sample_lwe(_lwe(2, 10, 5, 10, GAUSS), sample_signal(10, 7, rng), rng)
    with pytest.raises(ParameterError):
        sample_lwe(ModelSpec(family=Family.XOR, k=2, n=10, epsilon=0), None, rng)


def test_lwe_normalize_equations() -> None:
    coef, vals = normalize_equations(np.array([[2, 3], [4, 1]]), np.array([1, 2]), 5)
    assert coef[:, 0].tolist() == [1, 1]
    assert coef.tolist() == [[1, 4], [1, 4]]
    assert vals.tolist() == [3, 3]


def test_lwe_combination_hand_trace() -> None:
    spec = _lwe(2, 3, 5, 2, GAUSS)
    instance = Instance(spec=spec, idx=[[0, 2], [1, 2]], vals=[4, 1], coef=[[2, 3], [4, 3]])
    union, coef, vals, pair_ids = combination_pairs(instance, 2, 2, None)
    assert union.tolist() == [[0, 1]]
    assert coef.tolist() == [[2, 1]]
    assert vals.tolist() == [3]
    assert pair_ids.tolist() == [[0, 1]]


def test_lwe_discr_eqcomb(rng: np.random.Generator) -> None:
    spec = _lwe(4, 30, 5, 20000, GAUSS)
    instance = sample_lwe(spec, sample_signal(30, 5, rng), rng)
    output, report = discr_eqcomb_lwe(instance, 2, rng, kappa=0.5)
    assert (output.spec.k, output.spec.n) == (2, 15)
    assert output.spec.noise.s == pytest.approx(math.sqrt(2))
    assert output.m > 0
    assert output.parents.shape == (output.m, 2)
    assert report.constants["recorded"] >= output.m


def test_lwe_discr_eqcomb_rejects(rng: np.random.Generator) -> None:
    instance = sample_lwe(_lwe(2, 30, 5, 100, UNIFORM), None, rng)
    with pytest.raises(AdmissibilityError):
        discr_eqcomb_lwe(instance, 3, rng)
    with pytest.raises(AdmissibilityError):
        discr_eqcomb_lwe(instance, 4, rng)


def test_lwe_regimes() -> None:
    sparse = lwe_regime(4, 2, 100, 5, 1000, uniform=False)
    dense = lwe_regime(4, 2, 100, 5, 10**9, uniform=False)
    assert sparse.bullet == 1 and not sparse.aggregates
    assert dense.bullet == 4 and dense.aggregates


def test_lwe_poisson_cap() -> None:
    for n in (10, 1000):
        cap = poisson_cap(n)
        assert stats.poisson.cdf(cap, 1) >= 1 - float(n) ** -settings.POISSON_TAIL_EXPONENT
        assert stats.poisson.cdf(cap - 1, 1) < 1 - float(n) ** -settings.POISSON_TAIL_EXPONENT
    assert poisson_cap(10) <= poisson_cap(1000)


def test_lwe_threshold_from_count() -> None:
    assert threshold_from_count(10**4, 2) == pytest.approx(0.5283, abs=1e-4)
    with pytest.raises(ParameterError):
        threshold_from_count(0, 2)


def test_lwe_collision_detection(rng: np.random.Generator) -> None:
    spec = _lwe(2, 6, 3, 2000, NoiseParams(kind=NoiseKind.UNIFORM, delta=0.8))
    plan = collision_plan(spec)
    assert plan.feasible
    planted = sample_lwe(spec, sample_signal(6, 3, rng), rng)
    null = sample_lwe(spec, None, rng)
    assert collision_statistics(planted).ratio > plan.T
    assert collision_detect(planted, plan.T) == Verdict.PLANTED
    assert collision_detect(null, plan.T) == Verdict.NULL


def test_lwe_no_collisions_is_null(rng: np.random.Generator) -> None:
    instance = sample_lwe(_lwe(2, 10, 5, 1, UNIFORM), None, rng)
    assert collision_statistics(instance).pairs == 0
    assert collision_detect(instance, 0.0) == Verdict.NULL


def test_lwe_xor_view(rng: np.random.Generator) -> None:
    spec = ModelSpec(family=Family.XOR, k=2, n=10, epsilon=0, m_value=50, delta_value=0.5)
    signal = sample_signal(10, SIGN_ALPHABET, rng)
    instance = sample_planted(spec, signal, rng)
    view = xor_as_lwe(instance)
    bits = signal_bits(signal)
    assert view.spec.q == 2
    assert view.spec.noise.delta == pytest.approx(0.5)
    assert np.array_equal(view.vals, (1 - instance.vals) // 2)
    flips = residuals(view, bits)
    noiseless = instance.vals * np.prod(signal.x[instance.idx], axis=1)
    assert np.array_equal(flips == 1, noiseless == -1)
    assert lwe_view_spec(spec).m == 50
    with pytest.raises(ParameterError):
        lwe_view_spec(view.spec)


def test_lwe_collision_plan_fields() -> None:
    spec = _lwe(2, 6, 3, 2000, NoiseParams(kind=NoiseKind.UNIFORM, delta=0.8))
    plan = collision_plan(spec)
    assert plan.classes == 30
    assert plan.lhs == pytest.approx(2000 * 0.64)
    assert plan.bound == pytest.approx(6.0)
    assert collision_threshold(spec) == pytest.approx(threshold_from_count(plan.expected_pairs, 3))
    sparse = collision_plan(_lwe(3, 50, 5, 10, GAUSS))
    assert not sparse.feasible


def test_lwe_collision_sample_size() -> None:
    spec = _lwe(3, 10, 5, 10, NoiseParams(kind=NoiseKind.UNIFORM, delta=0.5))
    m = collision_sample_size(spec)
    assert m == math.ceil(10**1.5 * 2 / 0.25 * math.log(1920))
    assert collision_plan(spec.derive(m_value=m)).feasible
    assert not collision_plan(spec.derive(m_value=m // 10)).feasible
    assert collision_sample_size(_lwe(2, 6, 7, 10, BOUNDED)) > 0
    with pytest.raises(ParameterError):
        collision_sample_size(_lwe(3, 10, 5, 10, NoiseParams(kind=NoiseKind.UNIFORM, delta=0.0)))

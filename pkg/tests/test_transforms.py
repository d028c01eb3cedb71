import math
from fractions import Fraction
from typing import Any, Optional, Tuple

import numpy as np
import pytest
from scipy import stats

from planted_reductions.errors import AdmissibilityError, ParameterError
from planted_reductions.models import (
    SIGN_ALPHABET,
    CountMode,
    Family,
    IndexSpace,
    Instance,
    ModelSpec,
    Sampling,
    Signal,
    TransformKind,
    entry_means,
    sample_planted,
    sample_signal,
)
from planted_reductions.transforms import (
    DETECTION,
    adjust_density,
    adjust_samples,
    clone_instance,
    compose_full,
    compose_reports,
    convert_index_order,
    convert_sampling,
    decompose_full,
    discretize_instance,
    gaussianize_instance,
    make_report,
    odd_parts,
    pad_with_pairs,
    reduce_order_factor,
    restrict_instance,
    set_count_mode,
    split_instance,
    stratum_weight,
)


def _spec(family: Family, k: int, n: int, m: int, delta: Optional[float], **fields: Any) -> ModelSpec:
    fields.setdefault("epsilon", 0)
    return ModelSpec(family=family, k=k, n=n, m_value=m, delta_value=delta, **fields)


def _planted(spec: ModelSpec, rng: np.random.Generator) -> Tuple[Instance, Signal]:
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    return sample_planted(spec, signal, rng), signal


def _estimate(instance: Instance, signal: Signal) -> Tuple[float, float]:
    aligned = instance.vals * entry_means(signal.x, instance.idx)
    return float(aligned.mean()), float(aligned.std() / math.sqrt(instance.m))


def test_transforms_report_constants_are_plain() -> None:
    spec = _spec(Family.XOR, 2, 10, 5, 0.5)
    report = make_report("plain", spec, spec, kept=np.int64(3), ratio=Fraction(1, 2), sizes=np.arange(2))
    assert report.constants == {"kept": 3, "ratio": "1/2", "sizes": [0, 1]}
    assert type(report.constants["kept"]) is int


def test_transforms_compose_reports_prefixes_constants() -> None:
    spec = _spec(Family.XOR, 2, 10, 5, 0.5)
    first = make_report("first", spec, spec, kept=1)
    second = make_report("second", spec, spec, kept=2)
    composed = compose_reports("chain", [first, second], total=3)
    assert composed.constants == {"total": 3, "0.first.kept": 1, "1.second.kept": 2}
    assert [stage.name for stage in composed.stages] == ["first", "second"]
    assert composed.signal_transform.kind == TransformKind.IDENTITY


def test_transforms_gaussianize_empty(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 30, 0, 0.2), rng)
    output, report = gaussianize_instance(instance, rng)
    assert output.m == 0
    assert output.spec.family == Family.GAUSS
    assert output.spec.m == 0
    assert report.constants["fallbacks"] == 0


def test_transforms_gaussianize_bias(rng: np.random.Generator) -> None:
    instance, signal = _planted(_spec(Family.XOR, 3, 30, 100000, 0.2), rng)
    output, report = gaussianize_instance(instance, rng)
    mean, se = _estimate(output, signal)
    assert output.spec.delta == pytest.approx(report.constants["mu"])
    assert abs(mean - output.spec.delta) < 4 * se
    assert np.array_equal(output.idx, instance.idx)
    with pytest.raises(ParameterError):
        gaussianize_instance(output, rng)


def test_transforms_discretize_bias(rng: np.random.Generator) -> None:
    instance, signal = _planted(_spec(Family.GAUSS, 3, 30, 200000, 0.5), rng)
    output, _ = discretize_instance(instance, rng)
    mean, se = _estimate(output, signal)
    assert output.spec.family == Family.XOR
    assert output.spec.delta == pytest.approx(0.38292, abs=1e-5)
    assert abs(mean - 0.38292) < 4 * se


def test_transforms_gaussianize_then_discretize_keeps_sign(rng: np.random.Generator) -> None:
    instance, signal = _planted(_spec(Family.XOR, 3, 30, 100000, 0.3), rng)
    gauss, _ = gaussianize_instance(instance, rng)
    back, _ = discretize_instance(gauss, rng)
    mean, se = _estimate(back, signal)
    assert back.spec.family == Family.XOR
    assert abs(mean - back.spec.delta) < 4 * se
    assert mean > 0


def test_transforms_poisson_count_mode(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 30, 10000, 0.3), rng)
    output, _ = set_count_mode(instance, CountMode.POISSON, rng)
    assert output.spec.count_mode == CountMode.POISSON
    assert output.spec.m == 5000
    assert abs(output.m - 5000) < 4 * math.sqrt(5000)
    assert np.unique(output.ids).shape[0] == output.m


def test_transforms_fixed_count_mode_on_empty(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 30, 0, 0.3), rng)
    output, _ = set_count_mode(instance, CountMode.FIXED, rng)
    assert output.m == 0


def test_transforms_index_order_single_index(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 1, 10, 100, 0.3), rng)
    output, _ = convert_index_order(instance, IndexSpace.TUPLE, rng)
    assert np.array_equal(output.idx, instance.idx)
    assert output.spec.index_space == IndexSpace.TUPLE


def test_transforms_index_order_orderings_are_uniform(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 3, 60000, 0.3), rng)
    assert np.all(instance.idx == [0, 1, 2])
    tuples, _ = convert_index_order(instance, IndexSpace.TUPLE, rng)
    codes = tuples.idx[:, 0] * 9 + tuples.idx[:, 1] * 3 + tuples.idx[:, 2]
    _, counts = np.unique(codes, return_counts=True)
    assert counts.shape[0] == 6
    assert stats.chisquare(counts).pvalue > 1e-4
    back, _ = convert_index_order(tuples, IndexSpace.SET, rng)
    assert np.array_equal(back.idx, instance.idx)


def test_transforms_index_order_needs_with_replacement(rng: np.random.Generator) -> None:
    spec = _spec(Family.XOR, 2, 10, 20, 0.3, sampling=Sampling.WITHOUT_REPL)
    instance, _ = _planted(spec, rng)
    with pytest.raises(AdmissibilityError):
        convert_index_order(instance, IndexSpace.TUPLE, rng)


def test_transforms_to_without_replacement(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 30, 200, 0.3), rng)
    output, report = convert_sampling(instance, Sampling.WITHOUT_REPL, rng)
    assert report.constants["budget"] == 41
    assert output.m == 41
    assert output.spec.sampling == Sampling.WITHOUT_REPL
    assert np.unique(output.idx, axis=0).shape[0] == 41
    assert set(output.ids.tolist()) <= set(instance.ids.tolist())


def test_transforms_to_with_replacement_large_space(rng: np.random.Generator) -> None:
    spec = _spec(Family.XOR, 3, 60, 10000, 0.3, sampling=Sampling.WITHOUT_REPL)
    instance, _ = _planted(spec, rng)
    output, report = convert_sampling(instance, Sampling.WITH_REPL, rng, space_size=10**12)
    assert report.constants["max_multiplicity"] == 1
    assert output.spec.sampling == Sampling.WITH_REPL
    assert output.spec.delta == pytest.approx(0.3)
    assert output.m == instance.m
    assert sorted(output.parents[:, 0].tolist()) == sorted(instance.ids.tolist())
    with pytest.raises(AdmissibilityError):
        convert_sampling(instance, Sampling.WITH_REPL, rng, purpose=DETECTION)


def test_transforms_adjust_samples_up(rng: np.random.Generator) -> None:
    instance, signal = _planted(_spec(Family.XOR, 3, 30, 50000, 0.4), rng)
    output, _ = adjust_samples(instance, 100000, rng)
    mean, se = _estimate(output, signal)
    assert output.spec.delta == pytest.approx(0.2)
    assert abs(mean - 0.2) < 4 * se
    assert np.unique(output.ids).shape[0] == output.m


def test_transforms_adjust_samples_down(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.GAUSS, 3, 30, 20000, 0.4), rng)
    output, _ = adjust_samples(instance, 10000, rng)
    assert output.spec.m == 10000
    assert abs(output.m - 10000) < 5 * math.sqrt(20000 / 4)


def test_transforms_adjust_density(rng: np.random.Generator) -> None:
    spec = ModelSpec(family=Family.XOR, k=2, n=100, epsilon=1, delta_value=0.05)
    instance, _ = _planted(spec, rng)
    output, report = adjust_density(instance, Fraction(1, 2), rng)
    assert output.spec.epsilon == Fraction(1, 2)
    assert output.spec.eta == Fraction(1, 2)
    assert output.spec.m == 1000
    assert report.stages[0].name == "adjust_samples"


def test_transforms_restrict(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 2, 30, 5000, 0.3), rng)
    output, report = restrict_instance(instance, 20)
    assert output.spec.n == 20
    assert output.m == report.constants["kept"]
    assert output.m > 0 and np.all(output.idx < 20)
    assert report.signal_transform.kind == TransformKind.RESTRICT
    with pytest.raises(ParameterError):
        restrict_instance(instance, 31)


def test_transforms_split_fixed(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 3, 30, 10000, 0.3), rng)
    parts, report = split_instance(instance, 2, rng)
    assert [part.m for part in parts] == [5000, 5000]
    ids = np.concatenate([part.ids for part in parts])
    assert sorted(ids.tolist()) == instance.ids.tolist()
    assert report.constants["sizes"] == [5000, 5000]


def test_transforms_split_poisson(rng: np.random.Generator) -> None:
    spec = _spec(Family.XOR, 3, 30, 9000, 0.3, count_mode=CountMode.POISSON)
    instance, _ = _planted(spec, rng)
    parts, _ = split_instance(instance, 3, rng)
    assert sum(part.m for part in parts) == instance.m
    for part in parts:
        assert abs(part.m - instance.m / 3) < 5 * math.sqrt(instance.m / 3)


def test_transforms_split_needs_with_replacement(rng: np.random.Generator) -> None:
    spec = _spec(Family.XOR, 2, 10, 20, 0.3, sampling=Sampling.WITHOUT_REPL)
    instance, _ = _planted(spec, rng)
    with pytest.raises(AdmissibilityError):
        split_instance(instance, 2, rng)


def test_transforms_clone_gauss(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.GAUSS, 3, 30, 20000, 0.0), rng)
    copies, report = clone_instance(instance, 2, rng)
    assert len(copies) == 2
    assert np.array_equal(copies[0].idx, copies[1].idx)
    assert abs(np.corrcoef(copies[0].vals, copies[1].vals)[0, 1]) < 5 / math.sqrt(instance.m)
    for copy in copies:
        assert stats.kstest(copy.vals, "norm").pvalue > 1e-4
    assert report.constants["depth"] == 1


def test_transforms_stratum_weights() -> None:
    assert stratum_weight(6, 3, 3) == Fraction(5, 9)
    assert stratum_weight(6, 3, 3) + stratum_weight(6, 3, 1) == 1
    assert stratum_weight(6, 3, 2) == 0
    assert sum(stratum_weight(5, 4, odd) for odd in (0, 2, 4)) == 1


def test_transforms_odd_parts() -> None:
    keep = odd_parts(np.array([[0, 0, 1], [1, 2, 3], [2, 2, 2]]))
    assert keep.tolist() == [[False, False, True], [True, True, True], [False, False, True]]


def test_transforms_decompose_hand_example(rng: np.random.Generator) -> None:
    spec = ModelSpec(
        family=Family.GAUSS, k=3, n=5, epsilon=0, index_space=IndexSpace.MULTISET, m_value=2, delta_value=0.1
    )
    instance = Instance(spec=spec, idx=[[0, 0, 1], [1, 2, 3]], vals=[0.7, -0.2])
    strata, _ = decompose_full(instance, rng)
    assert [stratum.spec.k for stratum in strata] == [3, 1]
    assert strata[0].idx.tolist() == [[1, 2, 3]]
    assert strata[0].vals.tolist() == [-0.2]
    assert strata[1].idx.tolist() == [[1]]
    assert strata[1].vals.tolist() == [0.7]
    assert strata[1].parents.tolist() == [[0]]


def test_transforms_decompose_needs_multiset(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.GAUSS, 3, 10, 10, 0.1), rng)
    with pytest.raises(ParameterError):
        decompose_full(instance, rng)


def test_transforms_compose_single_stratum(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.GAUSS, 3, 6, 300, 0.2), rng)
    output, _ = compose_full([instance], Fraction(0), rng)
    assert output.spec.index_space == IndexSpace.MULTISET
    assert output.m == instance.m
    source = output.parents[:, 0]
    assert np.array_equal(output.idx, instance.idx[source])
    assert np.array_equal(output.vals, instance.vals[source])
    assert sorted(source.tolist()) == instance.ids.tolist()


def test_transforms_pad_with_pairs_law(rng: np.random.Generator) -> None:
    base = np.full((20000, 1), 2)
    padded = pad_with_pairs(base, 1, 6, rng)
    assert padded.shape == (20000, 3)
    assert np.all(np.diff(padded, axis=1) >= 0)
    letters = np.bincount(padded[:, 1], minlength=6)
    expected = np.array([3, 3, 1, 3, 3, 3]) / 16 * 20000
    assert stats.chisquare(letters, expected).pvalue > 1e-4


def test_transforms_reduce_order_factor(rng: np.random.Generator) -> None:
    spec = _spec(Family.XOR, 4, 10, 500, 0.5, eta=Fraction(1), index_space=IndexSpace.MULTISET)
    instance, signal = _planted(spec, rng)
    output, report = reduce_order_factor(instance, 2, rng)
    assert (output.spec.k, output.spec.n, output.spec.eta) == (2, 100, Fraction(1, 2))
    assert report.signal_transform.n_out == 100
    lifted = report.signal_transform.evaluate(signal.x, output.idx)
    assert np.array_equal(output.vals * lifted, instance.vals * entry_means(signal.x, instance.idx))
    with pytest.raises(AdmissibilityError):
        reduce_order_factor(instance, 3, rng)


def test_transforms_reduce_order_needs_multiset(rng: np.random.Generator) -> None:
    instance, _ = _planted(_spec(Family.XOR, 4, 10, 50, 0.5), rng)
    with pytest.raises(ParameterError):
        reduce_order_factor(instance, 2, rng)

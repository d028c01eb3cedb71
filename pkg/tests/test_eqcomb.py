import math
from fractions import Fraction
from typing import Any

import numpy as np
import pytest

from planted_reductions.eqcomb import (
    Regime,
    cf_convergents,
    choose_order_k,
    colex_rank,
    discr_eqcomb,
    discr_eqcomb_two,
    gauss_eqcomb_two,
    kappa_dimension,
    majority_bias,
    order_is_admissible,
    plan_discr_eqcomb,
    plan_sparse_to_dense,
    reduce_k_discrete,
    reduce_k_gauss,
    sparse_to_dense,
)
from planted_reductions.errors import AdmissibilityError, ParameterError, PlannerError
from planted_reductions.models import (
    SIGN_ALPHABET,
    CountMode,
    Family,
    IndexSpace,
    Instance,
    ModelSpec,
    enumerate_index_space,
    sample_planted,
    sample_signal,
)
from planted_reductions.rng import make_rng


def _xor(k: int, n: int, m: int, delta: float = 0.5, **fields: Any) -> ModelSpec:
    fields.setdefault("epsilon", 0)
    return ModelSpec(family=Family.XOR, k=k, n=n, m_value=m, delta_value=delta, **fields)


def _gauss(k: int, n: int, m: int, delta: float = 0.3, **fields: Any) -> ModelSpec:
    fields.setdefault("epsilon", 1)
    return ModelSpec(family=Family.GAUSS, k=k, n=n, m_value=m, delta_value=delta, **fields)


def _draw(spec: ModelSpec, rng: np.random.Generator) -> Instance:
    return sample_planted(spec, sample_signal(spec.n, SIGN_ALPHABET, rng), rng)


def test_eqcomb_kappa_dimension() -> None:
    assert kappa_dimension(100) == 90
    assert kappa_dimension(10, 0.5) == 5
    assert kappa_dimension(10, 0.8) == 8
    with pytest.raises(ParameterError):
        kappa_dimension(10, 1.5)


def test_eqcomb_majority_bias() -> None:
    assert majority_bias(0.3, 1) == pytest.approx(0.3)
    assert majority_bias(0.3, 2) == pytest.approx(0.3)
    assert majority_bias(0.3, 3) > 0.3
    assert majority_bias(1.0, 5) == pytest.approx(1.0)


def test_eqcomb_plan_densifies() -> None:
    plan = plan_discr_eqcomb(_xor(6, 100, 1000, epsilon=Fraction(1, 3)), 4)
    assert plan.epsilon_out == 1
    assert plan.regime == Regime.SPARSE
    assert plan.n_prime == 90

    plan = plan_discr_eqcomb(_xor(10, 100, 1000, epsilon=Fraction(1, 10), eta=Fraction(1, 5)), 4)
    assert plan.epsilon_out == Fraction(1, 2)
    assert plan.eta_out == Fraction(2, 5)


def test_eqcomb_plan_rejects_inadmissible() -> None:
    with pytest.raises(AdmissibilityError):
        plan_discr_eqcomb(_xor(4, 30, 100), 3)
    with pytest.raises(AdmissibilityError):
        plan_discr_eqcomb(_xor(6, 100, 100, epsilon=Fraction(1, 3)), 6)
    with pytest.raises(AdmissibilityError):
        plan_discr_eqcomb(_xor(4, 100, 100), 2, kappa=0.01)
    with pytest.raises(AdmissibilityError):
        plan_discr_eqcomb(_xor(4, 30, 100), 2, kappa=0.95)


def test_eqcomb_discr_hand_trace() -> None:
    spec = _xor(4, 10, 2)
    instance = Instance(spec=spec, idx=[[0, 1, 8, 9], [2, 3, 8, 9]], vals=[1, -1])
    outputs = []
    for seed in range(20):
        output, report = discr_eqcomb(instance, 4, make_rng(seed), kappa=0.8)
        assert report.constants["recorded"] == 1
        assert output.spec.n == 8
        assert output.spec.count_mode == CountMode.POISSON
        if output.m:
            outputs.append(output)
    assert outputs
    for output in outputs:
        assert output.idx.tolist() == [[0, 1, 2, 3]]
        assert output.vals.tolist() == [-1]
        assert sorted(output.parents[0].tolist()) == [0, 1]


def test_eqcomb_discr_uses_each_sample_once(rng: np.random.Generator) -> None:
    instance = _draw(_xor(4, 30, 9000, 0.6), rng)
    output, report = discr_eqcomb(instance, 2, rng, kappa=0.5)
    assert (output.spec.k, output.spec.n) == (2, 15)
    assert output.spec.epsilon == 0 and output.spec.eta == 0
    assert output.spec.delta == pytest.approx(0.36)
    assert output.m > 0
    used = output.parents.reshape(-1)
    assert np.unique(used).shape[0] == used.shape[0]
    assert report.signal_transform.n_out == 15


def test_eqcomb_discr_two_hand_trace() -> None:
    first = Instance(spec=_xor(3, 10, 1), idx=[[0, 8, 9]], vals=[-1])
    second = Instance(spec=_xor(4, 10, 1), idx=[[1, 2, 8, 9]], vals=[-1])
    outputs = []
    for seed in range(20):
        output, report = discr_eqcomb_two(first, second, 3, make_rng(seed), kappa=0.8)
        assert report.constants["recorded"] == 1
        assert report.constants["shared"] == 2
        if output.m:
            outputs.append(output)
    assert outputs
    for output in outputs:
        assert output.idx.tolist() == [[0, 1, 2]]
        assert output.vals.tolist() == [1]
        assert output.parents.tolist() == [[0, 0]]


def test_eqcomb_discr_two_rejects(rng: np.random.Generator) -> None:
    first = _draw(_xor(3, 30, 10), rng)
    second = _draw(_xor(4, 30, 10), rng)
    with pytest.raises(AdmissibilityError):
        discr_eqcomb_two(first, second, 2, rng)
    with pytest.raises(AdmissibilityError):
        discr_eqcomb_two(first, _draw(_xor(4, 30, 10, epsilon=Fraction(1, 4)), rng), 3, rng)


def test_eqcomb_colex_rank_is_a_bijection() -> None:
    rows = enumerate_index_space(IndexSpace.SET, 6, 2)
    table = np.array([[math.comb(v, j) for j in range(4)] for v in range(7)])
    ranks = colex_rank(rows, table)
    assert sorted(ranks.tolist()) == list(range(15))


def test_eqcomb_gauss_two_admissibility(rng: np.random.Generator) -> None:
    small = _draw(_gauss(3, 12, 10), rng)
    with pytest.raises(AdmissibilityError):
        gauss_eqcomb_two(small, small, 2, rng)

    spec = _gauss(7, 14, 200, eta=Fraction(1, 4))
    output, report = gauss_eqcomb_two(_draw(spec, rng), _draw(spec, rng), 4, rng, kappa=0.5)
    assert (output.spec.k, output.spec.n) == (4, 7)
    assert output.spec.eta == Fraction(1, 2)
    assert output.m == math.comb(7, 4)
    assert report.constants["M"] == math.comb(7, 5)

    with pytest.raises(AdmissibilityError):
        gauss_eqcomb_two(_draw(_gauss(7, 14, 10, epsilon=Fraction(1, 2)), rng), _draw(spec, rng), 4, rng)


def test_eqcomb_convergents() -> None:
    assert cf_convergents(Fraction(3, 10)) == [(1, 3), (3, 10)]
    assert cf_convergents(Fraction(1, 2)) == [(1, 2)]
    assert cf_convergents(Fraction(3, 10), depth=1) == [(1, 3)]
    for q in range(2, 31):
        for p in range(1, q):
            r = Fraction(p, q)
            convergents = cf_convergents(r)
            assert Fraction(*convergents[-1]) == r
            for (a, b), (_, next_b) in zip(convergents, convergents[1:]):
                assert abs(r - Fraction(a, b)) <= Fraction(1, b * next_b)
    with pytest.raises(ParameterError):
        cf_convergents(Fraction(3, 2))


def test_eqcomb_choose_order_k() -> None:
    for A in (10, 100, 1000):
        assert choose_order_k(Fraction(9, 10), Fraction(1, 2), 2, A) == 4
    assert choose_order_k(Fraction(9, 10), Fraction(3, 10), 2, 50) == 20


def test_eqcomb_choose_order_k_grid() -> None:
    rationals = {Fraction(p, q) for q in range(2, 10) for p in range(1, q)}
    for c in (Fraction(3, 10), Fraction(3, 5), Fraction(9, 10)):
        for r in sorted(rationals):
            for k_prime in (1, 2, 3):
                for A in (20, 100):
                    try:
                        k = choose_order_k(c, r, k_prime, A)
                    except PlannerError:
                        limit = math.floor(c * A)
                        assert not any(order_is_admissible(j, c, r, k_prime, A) for j in range(1, limit + 1))
                    else:
                        assert order_is_admissible(k, c, r, k_prime, A)


def test_eqcomb_plan_sparse_to_dense() -> None:
    plan = plan_sparse_to_dense(Fraction(1, 10), Fraction(3, 5), Fraction(1, 10), 2)
    assert (plan.k, plan.a, plan.factor) == (12, 10, 2)
    assert plan.epsilon_hat == Fraction(3, 5)
    assert plan.eta_prime == Fraction(1, 10)
    assert plan.budget_A == 256
    assert plan.exact
    assert not any(stage.startswith("adjust_density") for stage in plan.stages)


def test_eqcomb_plan_sparse_to_dense_full_density() -> None:
    plan = plan_sparse_to_dense(Fraction(1, 3), 1, 0, 2)
    assert (plan.k, plan.a) == (7, 5)
    assert plan.epsilon_hat == 1
    assert plan.stages == [
        "split(2)",
        "discr_eqcomb(2)",
        "discr_eqcomb(4)",
        "compose_full(1)",
        "reduce_order_factor(2)",
    ]


def test_eqcomb_plan_sparse_to_dense_rejects() -> None:
    with pytest.raises(AdmissibilityError):
        plan_sparse_to_dense(Fraction(1, 2), Fraction(3, 4), 0, 2)
    with pytest.raises(AdmissibilityError):
        plan_sparse_to_dense(Fraction(1, 5), Fraction(1, 5), 0, 2)


def test_eqcomb_sparse_to_dense_checks_a(rng: np.random.Generator) -> None:
    instance = _draw(_xor(3, 20, 100, epsilon=Fraction(1, 4)), rng)
    with pytest.raises(AdmissibilityError):
        sparse_to_dense(instance, 2, 1, rng, a=3)


def test_eqcomb_reduce_k_discrete_routes(rng: np.random.Generator) -> None:
    even, report = reduce_k_discrete(_draw(_xor(5, 30, 2000, eta=Fraction(1, 10)), rng), 4, rng)
    assert report.constants["path"] == "even"
    assert even.spec.k == 4
    assert even.spec.eta == Fraction(1, 5)

    odd, report = reduce_k_discrete(_draw(_xor(4, 30, 3000), rng), 1, rng)
    assert report.constants["path"] == "odd_from_even"
    assert (odd.spec.k, odd.spec.n) == (1, 625)
    assert report.signal_transform.n_in == 30

    both, report = reduce_k_discrete(_draw(_xor(7, 30, 4000), rng), 5, rng)
    assert report.constants["path"] == "both_odd"
    assert (both.spec.k, both.spec.n) == (5, 20)
    assert [stage.name for stage in report.stages] == ["split", "discr_eqcomb", "restrict", "discr_eqcomb_two"]


def test_eqcomb_reduce_k_discrete_rejects(rng: np.random.Generator) -> None:
    with pytest.raises(AdmissibilityError):
        reduce_k_discrete(_draw(_xor(4, 30, 100), rng), 3, rng)
    with pytest.raises(AdmissibilityError):
        reduce_k_discrete(_draw(_xor(4, 30, 100, epsilon=Fraction(1, 4)), rng), 2, rng)


def test_eqcomb_reduce_k_gauss(rng: np.random.Generator) -> None:
    output, report = reduce_k_gauss(_draw(_gauss(4, 20, 4000), rng), 2, rng)
    assert report.constants["path"] == "even"
    assert (output.spec.k, output.spec.n) == (2, 16)
    assert output.spec.epsilon == 1
    with pytest.raises(AdmissibilityError):
        reduce_k_gauss(_draw(_gauss(7, 20, 10), rng), 3, rng)
    with pytest.raises(AdmissibilityError):
        reduce_k_gauss(_draw(_gauss(4, 20, 10, epsilon=Fraction(1, 2)), rng), 2, rng)

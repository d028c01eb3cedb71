import logging
import math
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.stats import binom

from planted_reductions.errors import AdmissibilityError, ParameterError, PlannerError
from planted_reductions.models import (
    CountMode,
    Family,
    IndexSpace,
    Instance,
    ModelSpec,
    Rational,
    Sampling,
    SignalTransform,
    enumerate_index_space,
)
from planted_reductions.settings import settings
from planted_reductions.transforms import (
    DETECTION,
    ReductionReport,
    _aggregation_groups,
    adjust_density,
    compose_full,
    compose_reports,
    convert_sampling,
    make_report,
    reduce_order_factor,
    restrict_instance,
    split_instance,
)

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    SPARSE = "sparse"
    DENSE = "dense"


class EqCombPlan(BaseModel):  # type: ignore
    k_in: int
    k_out: int
    n: int
    n_prime: int
    regime: Regime
    expected_pairs: float = Field(description="Closed-form expected number of recorded products")
    B_Z: int = Field(description="Target output count in the sparse regime", ge=1)
    B_obs: int = Field(description="Observations aggregated per index set in the dense regime", ge=1)
    epsilon_out: Rational
    eta_out: Rational

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def kappa(self) -> float:
        return self.n_prime / self.n


def kappa_dimension(n: int, kappa: Optional[float] = None) -> int:
    """Size n' of the kept coordinates; the cancellation zone is range(n', n)."""
    if kappa is not None:
        if not 0 < kappa < 1:
            raise ParameterError(f"kappa must lie in (0, 1), got {kappa}")
        return math.floor(kappa * n)
    log_n = math.log(n) if n > 1 else 1.0
    return max(math.floor((1 - 1 / log_n) * n), math.ceil(n - math.sqrt(n)))


def _zone_split(idx: np.ndarray, n_prime: int, zone_size: int) -> np.ndarray:
    """Rows of sorted index sets with exactly `zone_size` entries in the cancellation zone."""
    if idx.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero((idx >= n_prime).sum(axis=1) == zone_size)


def _disjoint_union(left: np.ndarray, right: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted row-wise union and a mask of the rows where the parts do not intersect."""
    union = np.sort(np.concatenate([left, right], axis=1), axis=1)
    if union.shape[1] < 2:
        return union, np.ones(union.shape[0], dtype=bool)
    return union, np.all(np.diff(union, axis=1) > 0, axis=1)


def majority_bias(delta: float, votes: int) -> float:
    """Exact bias of a majority of `votes` Rad(delta) signs with a fair tie-break."""
    p = (1 + delta) / 2
    wins = np.arange(votes + 1)
    weights = binom.pmf(wins, votes, p)
    return float(np.sum(weights * np.sign(2 * wins - votes)))


def _majority(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    totals = values.sum(axis=1)
    ties = totals == 0
    out = np.sign(totals).astype(np.int64)
    out[ties] = 1 - 2 * rng.integers(0, 2, size=int(ties.sum()))
    return out


def _check_eqcomb(spec: ModelSpec, k_prime: int, n_prime: int, stage: str) -> None:
    k = spec.k
    if k_prime < 2 or k_prime % 2:
        raise AdmissibilityError(f"k' even and >= 2 (k'={k_prime})", stage)
    if Fraction(k_prime) > k * (1 - spec.epsilon):
        raise AdmissibilityError(f"k' <= k(1 - eps) (k'={k_prime}, k={k}, eps={spec.epsilon})", stage)
    if n_prime < k_prime:
        raise AdmissibilityError(f"kappa*n >= k' (kappa*n={n_prime}, k'={k_prime})", stage)
    if spec.n - n_prime < k - k_prime // 2:
        raise AdmissibilityError(f"cancellation zone holds k - k'/2 = {k - k_prime // 2} indices", stage)


def plan_discr_eqcomb(spec: ModelSpec, k_prime: int, kappa: Optional[float] = None) -> EqCombPlan:
    n_prime = kappa_dimension(spec.n, kappa)
    _check_eqcomb(spec, k_prime, n_prime, "discr_eqcomb")
    k, n, half = spec.k, spec.n, k_prime // 2
    zone = k - half
    groups = math.comb(n - n_prime, zone)
    rate = spec.m * math.comb(n_prime, half) / math.comb(n, k)
    pair_prob = 1 - math.exp(-rate) * (1 + rate)
    disjoint = math.comb(n_prime - half, half) / math.comb(n_prime, half)
    expected = groups * pair_prob * disjoint
    regime = Regime.SPARSE if 2 * k * spec.epsilon <= k_prime else Regime.DENSE
    B_Z = max(1, math.floor(settings.SAFETY_FACTOR * expected))
    B_obs = max(1, math.floor(settings.SAFETY_FACTOR * expected / math.comb(n_prime, k_prime)))
    return EqCombPlan(
        k_in=k,
        k_out=k_prime,
        n=n,
        n_prime=n_prime,
        regime=regime,
        expected_pairs=expected,
        B_Z=B_Z,
        B_obs=B_obs,
        epsilon_out=min(Fraction(2 * k) * spec.epsilon / k_prime, Fraction(1)),
        eta_out=2 * spec.eta,
    )


def _pair_within_groups(
    keys: np.ndarray, rows: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """One random pair of rows for every key shared by at least two rows."""
    if rows.shape[0] == 0:
        return rows[:0], rows[:0]
    shuffled = rng.permutation(rows.shape[0])
    _, first, inverse, counts = np.unique(
        keys[shuffled], axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    grouped = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    paired = np.flatnonzero(counts >= 2)
    left = rows[shuffled][grouped[starts[paired]]]
    right = rows[shuffled][grouped[starts[paired] + 1]]
    return left, right


def _thin(count: int, target: int, rng: np.random.Generator, stage: str) -> np.ndarray:
    wanted = int(rng.poisson(target))
    if wanted > count:
        logger.warning(f"{stage}: only {count} combined samples for a target of {wanted}")
    keep = min(wanted, count)
    return np.sort(rng.choice(count, size=keep, replace=False)) if keep else np.zeros(0, dtype=np.int64)


def discr_eqcomb(
    instance: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    """Multiply pairs of XOR equations that agree on the cancellation zone."""
    spec = instance.spec
    if spec.family != Family.XOR or spec.index_space != IndexSpace.SET:
        raise ParameterError("discr_eqcomb needs an XOR instance over index sets")
    plan = plan_discr_eqcomb(spec, k_prime, kappa)
    n_prime, half, zone = plan.n_prime, k_prime // 2, spec.k - k_prime // 2

    rows = _zone_split(instance.idx, n_prime, zone)
    parts = instance.idx[rows]
    left, right = _pair_within_groups(parts[:, half:], rows, rng)
    union, disjoint = _disjoint_union(instance.idx[left, :half], instance.idx[right, :half])
    left, right, union = left[disjoint], right[disjoint], union[disjoint]
    products = instance.vals[left] * instance.vals[right]
    parents = np.stack([instance.ids[left], instance.ids[right]], axis=1)
    delta = spec.delta**2

    output_spec = spec.derive(
        k=k_prime,
        n=n_prime,
        epsilon=plan.epsilon_out,
        eta=plan.eta_out,
        count_mode=CountMode.POISSON,
        sampling=Sampling.WITH_REPL,
    )
    stages: List[ReductionReport] = []
    if plan.regime == Regime.SPARSE:
        keep = _thin(union.shape[0], plan.B_Z, rng, "discr_eqcomb")
        output_spec = output_spec.derive(m_value=int(keep.shape[0]), delta_value=delta)
        output = Instance(spec=output_spec, idx=union[keep], vals=products[keep], parents=parents[keep])
    else:
        terms, members = _aggregation_groups(union, np.arange(union.shape[0]), plan.B_obs, rng)
        if terms.shape[0] == 0:
            logger.warning(f"discr_eqcomb: no index set reached {plan.B_obs} observations")
        votes = _majority(products[members], rng)
        delta = majority_bias(delta, plan.B_obs)
        voted_spec = output_spec.derive(
            sampling=Sampling.WITHOUT_REPL,
            count_mode=CountMode.FIXED,
            m_value=int(terms.shape[0]),
            delta_value=delta,
        )
        voted = Instance(spec=voted_spec, idx=terms, vals=votes, parents=parents[members].reshape(terms.shape[0], -1))
        output, stage = convert_sampling(voted, Sampling.WITH_REPL, rng, purpose=DETECTION)
        stages.append(stage)
        assert voted.parents is not None and output.parents is not None
        output = Instance(
            spec=output.spec, idx=output.idx, vals=output.vals, parents=voted.parents[output.parents[:, 0]]
        )
        output_spec = output.spec

    report = make_report(
        "discr_eqcomb",
        spec,
        output_spec,
        SignalTransform.restrict(spec.n, n_prime),
        stages=stages,
        kappa=plan.kappa,
        n_prime=n_prime,
        regime=plan.regime.value,
        expected_pairs=plan.expected_pairs,
        B_Z=plan.B_Z,
        B_obs=plan.B_obs,
        recorded=int(union.shape[0]),
    )
    return output, report


def discr_eqcomb_two(
    first: Instance,
    second: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    """Combine equations of orders k1 and k2 that share a cancellation set of size (k1 + k2 - k') / 2."""
    spec1, spec2 = first.spec, second.spec
    stage = "discr_eqcomb_two"
    for spec in (spec1, spec2):
        if spec.family != Family.XOR or spec.index_space != IndexSpace.SET:
            raise ParameterError(f"{stage} needs XOR instances over index sets")
        if spec.epsilon != 0:
            raise AdmissibilityError(f"eps = 0 for both inputs (got {spec.epsilon})", stage)
    if spec1.n != spec2.n:
        raise ParameterError(f"{stage} needs a shared dimension, got {spec1.n} and {spec2.n}")
    k1, k2, n = spec1.k, spec2.k, spec1.n
    if (k1 + k2 - k_prime) % 2:
        raise AdmissibilityError(f"(k1 + k2 - k') even (k1={k1}, k2={k2}, k'={k_prime})", stage)
    if not abs(k1 - k2) <= k_prime <= min(k1, k2):
        raise AdmissibilityError(f"|k1 - k2| <= k' <= min(k1, k2) (k1={k1}, k2={k2}, k'={k_prime})", stage)
    shared = (k1 + k2 - k_prime) // 2
    n_prime = kappa_dimension(n, kappa)
    if n - n_prime < shared or n_prime < k_prime:
        raise AdmissibilityError(f"cancellation zone holds {shared} indices and kappa*n >= k'", stage)
    h1, h2 = k1 - shared, k2 - shared

    rows1 = _zone_split(first.idx, n_prime, shared)
    rows2 = _zone_split(second.idx, n_prime, shared)
    left, right = _pair_across(first.idx[rows1, h1:], rows1, second.idx[rows2, h2:], rows2, rng)
    union, disjoint = _disjoint_union(first.idx[left, :h1], second.idx[right, :h2])
    left, right, union = left[disjoint], right[disjoint], union[disjoint]
    products = first.vals[left] * second.vals[right]

    rate1 = spec1.m * math.comb(n_prime, h1) / math.comb(n, k1)
    rate2 = spec2.m * math.comb(n_prime, h2) / math.comb(n, k2)
    disjoint_prob = math.comb(n_prime - h1, h2) / math.comb(n_prime, h2)
    expected = math.comb(n - n_prime, shared) * (1 - math.exp(-rate1)) * (1 - math.exp(-rate2)) * disjoint_prob
    B_Z = max(1, math.floor(settings.SAFETY_FACTOR * expected))
    keep = _thin(union.shape[0], B_Z, rng, stage)

    output_spec = spec1.derive(
        k=k_prime,
        n=n_prime,
        epsilon=Fraction(0),
        eta=spec1.eta + spec2.eta,
        count_mode=CountMode.POISSON,
        m_value=int(keep.shape[0]),
        delta_value=spec1.delta * spec2.delta,
    )
    output = Instance(
        spec=output_spec,
        idx=union[keep],
        vals=products[keep],
        parents=np.stack([first.ids[left], second.ids[right]], axis=1)[keep],
    )
    report = make_report(
        stage,
        spec1,
        output_spec,
        SignalTransform.restrict(n, n_prime),
        kappa=n_prime / n,
        n_prime=n_prime,
        shared=shared,
        expected_pairs=expected,
        B_Z=B_Z,
        recorded=int(union.shape[0]),
        second_input=spec2.model_dump(mode="json"),
    )
    return output, report


def _pair_across(
    keys1: np.ndarray,
    rows1: np.ndarray,
    keys2: np.ndarray,
    rows2: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """For every cancellation key present in both inputs pair one random row of each."""
    if rows1.shape[0] == 0 or rows2.shape[0] == 0:
        return rows1[:0], rows2[:0]
    shuffled1 = rng.permutation(rows1.shape[0])
    shuffled2 = rng.permutation(rows2.shape[0])
    unique1, first1 = np.unique(keys1[shuffled1], axis=0, return_index=True)
    unique2, first2 = np.unique(keys2[shuffled2], axis=0, return_index=True)
    lookup = {tuple(key): position for key, position in zip(unique2.tolist(), first2.tolist())}
    left, right = [], []
    for key, position in zip(unique1.tolist(), first1.tolist()):
        match = lookup.get(tuple(key))
        if match is not None:
            left.append(rows1[shuffled1[position]])
            right.append(rows2[shuffled2[match]])
    return np.array(left, dtype=np.int64), np.array(right, dtype=np.int64)


def _comb_table(n: int, k: int) -> np.ndarray:
    table = np.zeros((n + 1, k + 2), dtype=np.int64)
    for v in range(n + 1):
        for j in range(k + 2):
            table[v, j] = math.comb(v, j)
    return table


def colex_rank(rows: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Colexicographic rank of sorted distinct rows among subsets of the same size."""
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0], dtype=np.int64)
    return sum(table[rows[:, j], j + 1] for j in range(rows.shape[1]))


def reveal_fraction(spec: ModelSpec) -> float:
    space = math.comb(spec.n, spec.k)
    if spec.sampling == Sampling.WITHOUT_REPL:
        return min(1.0, spec.m / space)
    return 1 - math.exp(-spec.m / space)


def _flatten(
    instance: Instance, n_prime: int, shared: int, table: np.ndarray, rng: np.random.Generator
) -> sparse.csr_matrix:
    """Rows: zone subsets of size `shared`; columns: subsets of range(n_prime); one value per index set."""
    spec = instance.spec
    outside = spec.k - shared
    rows = _zone_split(instance.idx, n_prime, shared)
    if rows.shape[0]:
        shuffled = rows[rng.permutation(rows.shape[0])]
        _, first = np.unique(instance.idx[shuffled], axis=0, return_index=True)
        rows = shuffled[first]
    terms = instance.idx[rows]
    row_rank = colex_rank(terms[:, outside:] - n_prime, table)
    col_rank = colex_rank(terms[:, :outside], table)
    shape = (math.comb(spec.n - n_prime, shared), math.comb(n_prime, outside))
    return sparse.csr_matrix((instance.vals[rows], (row_rank, col_rank)), shape=shape)


def _gram_combine(
    first: Instance,
    second: Instance,
    k_prime: int,
    n_prime: int,
    rng: np.random.Generator,
    reveal1: float,
    reveal2: float,
) -> Tuple[np.ndarray, np.ndarray, Dict[str, Any]]:
    """Scaled Gram product of two flattenings evaluated on canonical splits of every k'-subset of range(n')."""
    k1, k2, n = first.spec.k, second.spec.k, first.spec.n
    shared = (k1 + k2 - k_prime) // 2
    h1 = k1 - shared
    cells = math.comb(n_prime, k_prime)
    if cells > settings.GRAM_CELL_CAP:
        raise ParameterError(f"Refusing to build {cells} output cells")
    table = _comb_table(n, max(k1, k2))
    left = _flatten(first, n_prime, shared, table, rng)
    right = _flatten(second, n_prime, shared, table, rng)
    groups = math.comb(n - n_prime, shared)
    scale = 1 / math.sqrt(groups * reveal1 * reveal2)
    gram = (left.T @ right).tocsr() * scale
    terms = enumerate_index_space(IndexSpace.SET, n_prime, k_prime)
    values = np.asarray(gram[colex_rank(terms[:, :h1], table), colex_rank(terms[:, h1:], table)]).reshape(-1)
    constants = {"M": groups, "reveal1": reveal1, "reveal2": reveal2, "scale": scale, "cells": cells}
    return terms, values, constants


def _check_gauss_regime(spec: ModelSpec, k_prime: int, stage: str) -> None:
    k, eps, eta = spec.k, spec.epsilon, spec.eta
    if not Fraction(1, 3) < eps <= 1:
        raise AdmissibilityError(f"eps in (1/3, 1] (eps={eps})", stage)
    if not -Fraction(k) * eps / 2 < eta <= Fraction(k - 2, 2):
        raise AdmissibilityError(f"-k eps/2 < eta <= (k-2)/2 (eta={eta})", stage)
    bound = min(k * eps + 2 * eta, Fraction(k) * (3 * eps - 1) / 2, Fraction(k) * (1 + eps) / 4)
    if not k_prime < bound:
        raise AdmissibilityError(
            f"k' < min(k eps + 2 eta, k(3 eps - 1)/2, k(1 + eps)/4) (k'={k_prime}, bound={bound})", stage
        )


def gauss_eqcomb(
    instance: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
    check_regime: bool = True,
) -> Tuple[Instance, ReductionReport]:
    """Gaussian equation combination through the Gram matrix of two flattened halves."""
    spec = instance.spec
    stage = "gauss_eqcomb"
    if spec.family != Family.GAUSS or spec.index_space != IndexSpace.SET:
        raise ParameterError(f"{stage} needs a Gaussian instance over index sets")
    if k_prime < 2 or k_prime % 2:
        raise AdmissibilityError(f"k' even and >= 2 (k'={k_prime})", stage)
    if check_regime:
        _check_gauss_regime(spec, k_prime, stage)
    n_prime = kappa_dimension(spec.n, kappa)
    if spec.n - n_prime < spec.k - k_prime // 2 or n_prime < k_prime:
        raise AdmissibilityError(f"cancellation zone holds k - k'/2 = {spec.k - k_prime // 2} indices", stage)

    halves, split_report = split_instance(instance, 2, rng)
    reveal = 1 - math.exp(-(spec.m / 2) / math.comb(spec.n, spec.k))
    terms, values, constants = _gram_combine(halves[0], halves[1], k_prime, n_prime, rng, reveal, reveal)
    delta = spec.delta**2 * reveal * math.sqrt(constants["M"])
    complete_spec = spec.derive(
        k=k_prime,
        n=n_prime,
        epsilon=Fraction(1),
        eta=2 * spec.eta,
        sampling=Sampling.WITHOUT_REPL,
        count_mode=CountMode.FIXED,
        m_value=int(terms.shape[0]),
        delta_value=delta,
    )
    complete = Instance(spec=complete_spec, idx=terms, vals=values)
    output, resample_report = convert_sampling(complete, Sampling.WITH_REPL, rng, purpose=DETECTION)
    report = make_report(
        stage,
        spec,
        output.spec,
        SignalTransform.restrict(spec.n, n_prime),
        stages=[split_report, resample_report],
        kappa=n_prime / spec.n,
        n_prime=n_prime,
        check_regime=check_regime,
        **constants,
    )
    return output, report


def gauss_eqcomb_two(
    first: Instance,
    second: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
    check_regime: bool = True,
) -> Tuple[Instance, ReductionReport]:
    """Gram combination of two Gaussian instances of orders k1, k2 at density 1 into order k'."""
    spec1, spec2 = first.spec, second.spec
    stage = "gauss_eqcomb_two"
    for spec in (spec1, spec2):
        if spec.family != Family.GAUSS or spec.index_space != IndexSpace.SET:
            raise ParameterError(f"{stage} needs Gaussian instances over index sets")
        if spec.epsilon != 1:
            raise AdmissibilityError(f"eps = 1 for both inputs (got {spec.epsilon})", stage)
        if check_regime and spec.eta < 0:
            raise AdmissibilityError(f"eta >= 0 for both inputs (got {spec.eta})", stage)
    if spec1.n != spec2.n:
        raise ParameterError(f"{stage} needs a shared dimension, got {spec1.n} and {spec2.n}")
    k1, k2, n = spec1.k, spec2.k, spec1.n
    if (k1 + k2 - k_prime) % 2:
        raise AdmissibilityError(f"(k1 + k2 - k') even (k1={k1}, k2={k2}, k'={k_prime})", stage)
    if not abs(k1 - k2) <= k_prime <= min(k1, k2):
        raise AdmissibilityError(f"|k1 - k2| <= k' <= min(k1, k2) (k1={k1}, k2={k2}, k'={k_prime})", stage)
    if not 3 * k_prime < k1 + k2:
        raise AdmissibilityError(f"k' < (k1 + k2)/3 (k1={k1}, k2={k2}, k'={k_prime})", stage)
    shared = (k1 + k2 - k_prime) // 2
    n_prime = kappa_dimension(n, kappa)
    if n - n_prime < shared or n_prime < k_prime:
        raise AdmissibilityError(f"cancellation zone holds {shared} indices and kappa*n >= k'", stage)

    reveal1, reveal2 = reveal_fraction(spec1), reveal_fraction(spec2)
    terms, values, constants = _gram_combine(first, second, k_prime, n_prime, rng, reveal1, reveal2)
    delta = spec1.delta * spec2.delta * math.sqrt(constants["M"] * reveal1 * reveal2)
    output_spec = spec1.derive(
        k=k_prime,
        n=n_prime,
        epsilon=Fraction(1),
        eta=spec1.eta + spec2.eta,
        sampling=Sampling.WITHOUT_REPL,
        count_mode=CountMode.FIXED,
        m_value=int(terms.shape[0]),
        delta_value=delta,
    )
    output = Instance(spec=output_spec, idx=terms, vals=values)
    report = make_report(
        stage,
        spec1,
        output_spec,
        SignalTransform.restrict(n, n_prime),
        kappa=n_prime / n,
        n_prime=n_prime,
        shared=shared,
        second_input=spec2.model_dump(mode="json"),
        **constants,
    )
    return output, report


def continued_fraction_terms(r: Fraction) -> Iterator[int]:
    """Euclidean algorithm on an exact rational."""
    while True:
        whole = r.numerator // r.denominator
        yield whole
        rest = r - whole
        if rest == 0:
            break
        r = 1 / rest


def cf_convergents(r: Any, depth: Optional[int] = None) -> List[Tuple[int, int]]:
    """Convergents (A_i, B_i) of r in (0, 1), skipping the leading 0/1."""
    r = Fraction(r)
    if not 0 < r < 1:
        raise ParameterError(f"Convergents are computed for r in (0, 1), got {r}")
    convergents = []
    prev_a, a = 0, 1
    prev_b, b = 1, 0
    for term in continued_fraction_terms(r):
        prev_a, a = a, term * a + prev_a
        prev_b, b = b, term * b + prev_b
        if a:
            convergents.append((a, b))
        if depth is not None and len(convergents) >= depth:
            break
    return convergents


def nearest_integer(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def order_is_admissible(k: int, c: Fraction, r: Fraction, k_prime: int, A: int) -> bool:
    """k <= cA, round(kr) a positive multiple of k', and k / ||kr|| > A."""
    if k < 1 or k > c * A:
        return False
    rounded = nearest_integer(k * r)
    if rounded < k_prime or rounded % k_prime:
        return False
    distance = abs(k * r - rounded)
    return distance == 0 or k / distance > A


def choose_order_k(c: Any, r: Any, k_prime: int, A: int) -> int:
    c, r = Fraction(c), Fraction(r)
    if not 0 < c < 1 or not 0 < r < 1:
        raise ParameterError(f"Need c, r in (0, 1), got c={c}, r={r}")
    exact = r.denominator * k_prime // math.gcd(r.numerator, k_prime)
    if order_is_admissible(exact, c, r, k_prime, A):
        return exact

    multipliers = range(1, 2 * k_prime + 2)
    candidates = sorted({t * b for _, b in cf_convergents(r) for t in multipliers})
    for k in candidates:
        if order_is_admissible(k, c, r, k_prime, A):
            return k

    limit = min(math.floor(c * A), settings.PLANNER_BRUTE_FORCE_CAP)
    for k in range(1, limit + 1):
        if order_is_admissible(k, c, r, k_prime, A):
            return k
    raise PlannerError(f"no k <= cA with round(kr) = 0 mod k' and k/||kr|| > A (c={c}, r={r}, k'={k_prime}, A={A})")


class SparseDensePlan(BaseModel):  # type: ignore
    k: int
    a: int
    k_prime: int
    epsilon: Rational
    epsilon_prime: Rational
    eta: Rational
    epsilon_hat: Rational
    factor: int = Field(description="Order reduction factor (2k - 2a) / k'")
    eta_prime: Rational
    budget_A: Optional[int] = None
    exact: bool = False
    stages: List[str] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def _check_sparse_to_dense(k: int, a: int, k_prime: int, epsilon: Fraction, epsilon_prime: Fraction) -> None:
    stage = "sparse_to_dense"
    if not 0 <= a < k:
        raise AdmissibilityError(f"0 <= a < k (a={a}, k={k})", stage)
    if not epsilon < epsilon_prime:
        raise AdmissibilityError(f"eps < eps' (eps={epsilon}, eps'={epsilon_prime})", stage)
    if epsilon_prime != 1 and not (epsilon < 1 and epsilon_prime > 2 * epsilon / (1 - epsilon)):
        raise AdmissibilityError(f"eps' > 2 eps/(1 - eps) or eps' = 1 (eps={epsilon}, eps'={epsilon_prime})", stage)
    if 2 * (k - a) > k * (1 - epsilon):
        raise AdmissibilityError(f"2(k - a) <= k(1 - eps) (k={k}, a={a}, eps={epsilon})", stage)
    if (2 * (k - a)) % k_prime:
        raise AdmissibilityError(f"k' | 2(k - a) (k'={k_prime}, k - a={k - a})", stage)


def _sparse_dense_plan(
    k: int, a: int, k_prime: int, epsilon: Fraction, epsilon_prime: Fraction, eta: Fraction, **extra: Any
) -> SparseDensePlan:
    _check_sparse_to_dense(k, a, k_prime, epsilon, epsilon_prime)
    kept = k - a
    epsilon_hat = min(Fraction(k) * epsilon / kept, Fraction(1))
    factor = 2 * kept // k_prime
    eta_prime = (2 * eta + 2 * kept * abs(epsilon_hat - epsilon_prime) / 2) / factor
    stages = [f"split({kept})"]
    stages += [f"discr_eqcomb({2 * i})" for i in range(1, kept + 1)]
    stages += [f"compose_full({epsilon_hat})"]
    if epsilon_hat != epsilon_prime:
        stages.append(f"adjust_density({epsilon_prime})")
    stages.append(f"reduce_order_factor({factor})")
    return SparseDensePlan(
        k=k,
        a=a,
        k_prime=k_prime,
        epsilon=epsilon,
        epsilon_prime=epsilon_prime,
        eta=eta,
        epsilon_hat=epsilon_hat,
        factor=factor,
        eta_prime=eta_prime,
        stages=stages,
        **extra,
    )


def plan_sparse_to_dense(epsilon: Any, epsilon_prime: Any, eta: Any, k_prime: int) -> SparseDensePlan:
    """Choose (k, a) for densifying eps -> eps' at output order k'."""
    epsilon, epsilon_prime, eta = Fraction(epsilon), Fraction(epsilon_prime), Fraction(eta)
    if k_prime < 1:
        raise ParameterError(f"k' must be positive, got {k_prime}")
    if not 0 < epsilon < epsilon_prime <= 1:
        raise AdmissibilityError(f"0 < eps < eps' <= 1 (eps={epsilon}, eps'={epsilon_prime})", "plan")
    if epsilon_prime == 1:
        bound = max(Fraction(k_prime) / epsilon, Fraction(2 * k_prime) / (1 - epsilon))
        k = math.floor(bound) + 1
        return _sparse_dense_plan(k, k - k_prime, k_prime, epsilon, epsilon_prime, eta, exact=True)
    if not (epsilon < Fraction(1, 3) and epsilon_prime > 2 * epsilon / (1 - epsilon)):
        raise AdmissibilityError(
            f"eps in (0, 1/3) and eps' > 2 eps/(1 - eps) (eps={epsilon}, eps'={epsilon_prime})", "plan"
        )

    r = epsilon / epsilon_prime
    if eta <= 0:
        k = r.denominator * k_prime // math.gcd(r.numerator, k_prime)
        return _sparse_dense_plan(k, k - nearest_integer(k * r), k_prime, epsilon, epsilon_prime, eta, exact=True)

    c = min(eta / (2 * epsilon_prime), Fraction(1, 2))
    for j in range(1, settings.PLANNER_MAX_BUDGET_EXPONENT + 1):
        A = 2**j
        try:
            k = choose_order_k(c, r, k_prime, A)
        except PlannerError:
            continue
        a = k - nearest_integer(k * r)
        try:
            plan = _sparse_dense_plan(
                k, a, k_prime, epsilon, epsilon_prime, eta, budget_A=A, exact=k * r == nearest_integer(k * r)
            )
        except AdmissibilityError as e:
            logger.info(f"Budget A={A}: k={k} rejected ({e})")
            continue
        logger.info(f"Planner chose k={k}, a={a} at budget A={A}")
        return plan
    raise PlannerError(f"no admissible (k, a) up to A = 2^{settings.PLANNER_MAX_BUDGET_EXPONENT}", "plan")


def sparse_to_dense(
    instance: Instance,
    k_prime: int,
    epsilon_prime: Any,
    rng: np.random.Generator,
    a: Optional[int] = None,
    kappa: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    """Densify an XOR instance: combine to even orders, compose, adjust density, reduce the order."""
    spec = instance.spec
    if spec.family != Family.XOR or spec.index_space != IndexSpace.SET:
        raise ParameterError("sparse_to_dense needs an XOR instance over index sets")
    epsilon_prime = Fraction(epsilon_prime)
    k = spec.k
    if a is None:
        a = k - nearest_integer(k * spec.epsilon / epsilon_prime) if epsilon_prime < 1 else k - k_prime
    plan = _sparse_dense_plan(k, a, k_prime, spec.epsilon, epsilon_prime, spec.eta)
    kept = k - a

    copies, split_report = split_instance(instance, kept, rng)
    stages: List[ReductionReport] = [split_report]
    combined: List[Instance] = []
    for i, copy in enumerate(copies, start=1):
        out, report = discr_eqcomb(copy, 2 * i, rng, kappa=kappa)
        combined.append(out)
        stages.append(report)
    strata = combined[::-1]
    composed, compose_report = compose_full(strata, plan.epsilon_hat, rng)
    stages.append(compose_report)
    if plan.epsilon_hat != epsilon_prime:
        composed, adjust_report = adjust_density(composed, epsilon_prime, rng)
        stages.append(adjust_report)
    output, reduce_report = reduce_order_factor(composed, plan.factor, rng)
    stages.append(reduce_report)

    n_prime = combined[0].spec.n
    transform = SignalTransform.compose(
        [SignalTransform.restrict(spec.n, n_prime), reduce_report.signal_transform]
    )
    report = compose_reports(
        "sparse_to_dense",
        stages,
        signal_transform=transform,
        input_spec=spec,
        plan=plan.model_dump(mode="json"),
    )
    return output, report


def reduce_k_discrete(
    instance: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    """Lower the order of a canonical (eps = 0) XOR instance from k to k'."""
    spec = instance.spec
    stage = "reduce_k_discrete"
    if spec.family != Family.XOR:
        raise ParameterError(f"{stage} needs an XOR instance")
    if spec.epsilon != 0:
        raise AdmissibilityError(f"eps = 0 (eps={spec.epsilon})", stage)
    k = spec.k
    if k_prime % 2 == 0 and 2 <= k_prime < k:
        output, report = discr_eqcomb(instance, k_prime, rng, kappa=kappa)
        return output, compose_reports(stage, [report], path="even")

    if k_prime % 2 == 1 and k % 2 == 0 and k >= 2 * k_prime:
        copies, split_report = split_instance(instance, k_prime, rng)
        stages = [split_report]
        combined = []
        for i, copy in enumerate(copies, start=1):
            out, report = discr_eqcomb(copy, 2 * i, rng, kappa=kappa)
            combined.append(out)
            stages.append(report)
        composed, compose_report = compose_full(combined[::-1], Fraction(0), rng)
        output, reduce_report = reduce_order_factor(composed, 2, rng)
        stages += [compose_report, reduce_report]
        transform = SignalTransform.compose(
            [SignalTransform.restrict(spec.n, combined[0].spec.n), reduce_report.signal_transform]
        )
        return output, compose_reports(stage, stages, signal_transform=transform, input_spec=spec, path="odd_from_even")

    if k_prime % 2 == 1 and k % 2 == 1 and k > k_prime:
        (copy1, copy2), split_report = split_instance(instance, 2, rng)
        lowered, lowered_report = discr_eqcomb(copy1, k - 1, rng, kappa=kappa)
        restricted, restrict_report = restrict_instance(copy2, lowered.spec.n)
        output, combine_report = discr_eqcomb_two(lowered, restricted, k_prime, rng, kappa=kappa)
        transform = SignalTransform.compose([lowered_report.signal_transform, combine_report.signal_transform])
        return output, compose_reports(
            stage,
            [split_report, lowered_report, restrict_report, combine_report],
            signal_transform=transform,
            input_spec=spec,
            path="both_odd",
        )

    raise AdmissibilityError(
        f"even k' < k, or odd k' with odd k > k' or even k >= 2k' (k={k}, k'={k_prime})", stage
    )


def _to_complete(instance: Instance, rng: np.random.Generator) -> Tuple[Instance, ReductionReport]:
    if instance.spec.sampling == Sampling.WITHOUT_REPL:
        return instance, make_report("keep_without_replacement", instance.spec, instance.spec)
    return convert_sampling(instance, Sampling.WITHOUT_REPL, rng, limit=instance.m)


def reduce_k_gauss(
    instance: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
    check_regime: bool = True,
) -> Tuple[Instance, ReductionReport]:
    """Lower the order of a Tensor PCA (eps = 1) instance from k to k'."""
    spec = instance.spec
    stage = "reduce_k_gauss"
    if spec.family != Family.GAUSS:
        raise ParameterError(f"{stage} needs a Gaussian instance")
    if spec.epsilon != 1:
        raise AdmissibilityError(f"eps = 1 (eps={spec.epsilon})", stage)
    k = spec.k
    if k_prime % 2 == 0:
        if not 2 * k > 3 * k_prime:
            raise AdmissibilityError(f"k > 3k'/2 for even k' (k={k}, k'={k_prime})", stage)
        (half1, half2), split_report = split_instance(instance, 2, rng)
        first, first_report = _to_complete(half1, rng)
        second, second_report = _to_complete(half2, rng)
        output, combine_report = gauss_eqcomb_two(first, second, k_prime, rng, kappa=kappa, check_regime=check_regime)
        return output, compose_reports(
            stage,
            [split_report, first_report, second_report, combine_report],
            signal_transform=combine_report.signal_transform,
            input_spec=spec,
            path="even",
        )

    if not k > 3 * k_prime:
        raise AdmissibilityError(f"k > 3k' for odd k' (k={k}, k'={k_prime})", stage)
    copies, split_report = split_instance(instance, k_prime, rng)
    stages: List[ReductionReport] = [split_report]
    combined = []
    for i, copy in enumerate(copies, start=1):
        (half1, half2), halves_report = split_instance(copy, 2, rng)
        first, first_report = _to_complete(half1, rng)
        second, second_report = _to_complete(half2, rng)
        out, combine_report = gauss_eqcomb_two(first, second, 2 * i, rng, kappa=kappa, check_regime=check_regime)
        combined.append(out)
        stages += [halves_report, first_report, second_report, combine_report]
    composed, compose_report = compose_full(combined[::-1], Fraction(1), rng)
    output, reduce_report = reduce_order_factor(composed, 2, rng)
    stages += [compose_report, reduce_report]
    transform = SignalTransform.compose(
        [SignalTransform.restrict(spec.n, combined[0].spec.n), reduce_report.signal_transform]
    )
    return output, compose_reports(stage, stages, signal_transform=transform, input_spec=spec, path="odd")

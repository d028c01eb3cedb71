import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import poisson

from planted_reductions.eqcomb import kappa_dimension
from planted_reductions.errors import AdmissibilityError, ParameterError
from planted_reductions.models import (
    CountMode,
    Family,
    IndexSpace,
    Instance,
    ModelSpec,
    NoiseKind,
    NoiseParams,
    Sampling,
    Signal,
    SignalTransform,
    draw_count,
    sample_index_terms,
)
from planted_reductions.rng import make_rng
from planted_reductions.settings import settings
from planted_reductions.transforms import ReductionReport, make_report

logger = logging.getLogger(__name__)

PLURALITY_TRIALS = 20000


class Verdict(str, Enum):
    PLANTED = "planted"
    NULL = "null"


class NoiseFamily(BaseModel):  # type: ignore
    """A combination-stable noise law over Z_q."""

    params: NoiseParams
    q: int = Field(description="Prime modulus", ge=2)

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "NoiseFamily":
        if spec.family != Family.LWE or spec.noise is None or spec.q is None:
            raise ParameterError("Noise laws are defined for LWE specs")
        return cls(params=spec.noise, q=spec.q)

    @property
    def kind(self) -> NoiseKind:
        return self.params.kind

    def pmf(self) -> np.ndarray:
        return _pmf(self.params, self.q)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.pmf())
        draws = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
        return np.minimum(draws, self.q - 1).astype(np.int64)

    def collision_probability(self) -> float:
        """Probability that two independent draws agree, ||chi||^2."""
        pmf = self.pmf()
        return float(np.dot(pmf, pmf))

    def difference(self) -> "NoiseFamily":
        """Law of e1 - e2 for independent e1, e2."""
        params = self.params
        if params.kind == NoiseKind.UNIFORM:
            assert params.delta is not None
            return self._with(delta=params.delta**2)
        if params.kind == NoiseKind.DISCRETE_GAUSS:
            assert params.s is not None
            return self._with(s=math.sqrt(2) * params.s)
        assert params.pmf is not None
        convolved: Dict[int, float] = {}
        for e1, p1 in params.pmf.items():
            for e2, p2 in params.pmf.items():
                convolved[e1 - e2] = convolved.get(e1 - e2, 0.0) + p1 * p2
        return self._with(pmf=dict(sorted(convolved.items())))

    def aggregated(self, count: int) -> "NoiseFamily":
        """Noise law after aggregating `count` observations of the same value."""
        if count < 1:
            raise ParameterError(f"Aggregation needs at least one sample, got {count}")
        params = self.params
        if count == 1 or params.kind == NoiseKind.BOUNDED:
            return self
        if params.kind == NoiseKind.UNIFORM:
            assert params.delta is not None
            return self._with(delta=plurality_delta(params.delta, self.q, count))
        assert params.s is not None
        levels = max(0, int(math.log2(count)) - 1)
        return self._with(s=params.s * 2 ** (-levels / 2))

    def _with(self, **changes: Any) -> "NoiseFamily":
        data = self.params.model_dump()
        data.update(changes)
        return NoiseFamily(params=NoiseParams(**data), q=self.q)


def _pmf(params: NoiseParams, q: int) -> np.ndarray:
    residues = np.arange(q)
    if params.kind == NoiseKind.UNIFORM:
        assert params.delta is not None
        pmf = np.full(q, (1 - params.delta) / q)
        pmf[0] += params.delta
        return pmf
    if params.kind == NoiseKind.DISCRETE_GAUSS:
        assert params.s is not None
        wraps = math.ceil(10 * params.s / q) + 3
        shifts = np.arange(-wraps, wraps + 1)[:, None] * q
        centered = np.where(residues > q // 2, residues - q, residues)[None, :]
        weights = np.exp(-math.pi * (centered + shifts) ** 2 / params.s**2).sum(axis=0)
        return weights / weights.sum()
    assert params.pmf is not None
    pmf = np.zeros(q)
    for offset, p in params.pmf.items():
        pmf[offset % q] += p
    return pmf


def noise_difference_law(family: NoiseFamily) -> NoiseFamily:
    return family.difference()


@lru_cache(maxsize=256)
def plurality_delta(delta: float, q: int, count: int) -> float:
    """Uniform-noise parameter after a plurality vote over `count` samples.

    Wrong values stay exchangeable, so the output is again uniform noise; its
    zero mass is estimated on a fixed internal stream.
    """
    rng = make_rng(0, f"plurality/{delta}/{q}/{count}")
    family = NoiseFamily(params=NoiseParams(kind=NoiseKind.UNIFORM, delta=delta), q=q)
    draws = family.sample(PLURALITY_TRIALS * count, rng).reshape(PLURALITY_TRIALS, count)
    votes = np.array([_plurality(row, q, rng) for row in draws])
    correct = float(np.mean(votes == 0))
    return max(0.0, min(1.0, (correct - 1 / q) / (1 - 1 / q)))


def _plurality(samples: np.ndarray, q: int, rng: np.random.Generator) -> int:
    counts = np.bincount(samples, minlength=q)
    winners = np.flatnonzero(counts == counts.max())
    return int(winners[rng.integers(0, winners.shape[0])])


def centered_lift(values: np.ndarray, q: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64) % q
    return np.where(values > q // 2, values - q, values)


def _parity_average(samples: np.ndarray, q: int, rng: np.random.Generator) -> int:
    """Iterated averaging of equal-parity pairs, taken on centered offsets from the first sample."""
    base = int(samples[0] % q)
    level = centered_lift(samples - base, q)[rng.permutation(samples.shape[0])]
    while level.shape[0] > 1:
        pairs: List[np.ndarray] = []
        for parity in (0, 1):
            group = level[level % 2 == parity]
            usable = group.shape[0] - group.shape[0] % 2
            if usable:
                pairs.append((group[:usable:2] + group[1:usable:2]) // 2)
        if not pairs:
            break
        level = np.concatenate(pairs)
        level = level[rng.permutation(level.shape[0])]
    return int((base + level[0]) % q)


def aggregate(family: NoiseFamily, samples: Sequence[int], rng: np.random.Generator) -> int:
    samples = np.asarray(samples, dtype=np.int64)
    if samples.shape[0] == 0:
        raise ParameterError("Cannot aggregate an empty sample")
    if samples.shape[0] == 1 or family.kind == NoiseKind.BOUNDED:
        return int(samples[0] % family.q)
    if family.kind == NoiseKind.UNIFORM:
        return _plurality(samples % family.q, family.q, rng)
    return _parity_average(samples, family.q, rng)


def sample_lwe(spec: ModelSpec, signal: Optional[Signal], rng: np.random.Generator) -> Instance:
    """Planted equations <c, x> + e mod q, or uniform values when signal is None."""
    if spec.family != Family.LWE or spec.index_space != IndexSpace.SET:
        raise ParameterError("sample_lwe needs an LWE spec over index sets")
    assert spec.q is not None
    q = spec.q
    count = draw_count(spec, rng)
    idx = sample_index_terms(IndexSpace.SET, spec.sampling, spec.n, spec.k, count, rng)
    coef = rng.integers(1, q, size=idx.shape)
    if signal is None:
        vals = rng.integers(0, q, size=count)
    else:
        if signal.q != q or signal.n != spec.n:
            raise ParameterError(f"Signal must live in Z_{q}^{spec.n}")
        noise = NoiseFamily.from_spec(spec).sample(count, rng)
        vals = ((coef * signal.x[idx]).sum(axis=1) + noise) % q if count else np.zeros(0, dtype=np.int64)
    return Instance(spec=spec, idx=idx, vals=vals, coef=coef)


def residuals(instance: Instance, signal: Signal) -> np.ndarray:
    """val - <coef, x> mod q for every equation."""
    q = instance.spec.q
    assert q is not None and instance.coef is not None
    if instance.m == 0:
        return np.zeros(0, dtype=np.int64)
    return (instance.vals - (instance.coef * signal.x[instance.idx]).sum(axis=1)) % q


def _inverse_table(q: int) -> np.ndarray:
    table = np.zeros(q, dtype=np.int64)
    table[1:] = [pow(c, -1, q) for c in range(1, q)]
    return table


def normalize_equations(
    coef: np.ndarray, vals: np.ndarray, q: int, column: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Scale every equation so that its coefficient in `column` becomes 1."""
    if coef.shape[0] == 0:
        return coef, vals
    scale = _inverse_table(q)[coef[:, column]]
    return (coef * scale[:, None]) % q, (vals * scale) % q


def poisson_cap(n: int) -> int:
    """Smallest c with P(Pois(1) <= c) >= 1 - n^-K."""
    target = 1 - float(n) ** (-settings.POISSON_TAIL_EXPONENT)
    cap = 0
    while poisson.cdf(cap, 1) < target:
        cap += 1
    return cap


def _expected_half_pairs(rate: float) -> float:
    """E floor(Pois(rate) / 2)."""
    return (rate - (1 - math.exp(-2 * rate)) / 2) / 2


class LweRegime(BaseModel):  # type: ignore
    bullet: int = Field(description="Which of the four parameter regimes applies", ge=1, le=4)
    aggregates: bool
    predicted_m: float
    description: str


def lwe_regime(k: int, k_prime: int, n: int, q: int, m: int, uniform: bool) -> LweRegime:
    """Classify (k, k', m) into the sparse/dense x aggregation regimes of LWE equation combination."""
    zone = k - k_prime / 2
    if uniform:
        Q = math.log(q - 1) / math.log(n) if q > 2 else 0.0
        eps = math.log(m) / math.log(n)
        low = zone + (zone - 1) * Q
        mid = k / 2 + k_prime / 4 + (k / 2 + k_prime / 4 - 1) * Q
        high = k_prime + (k_prime - 1) * Q
        pairs = m**2 * float(n) ** (-zone) * float(q - 1) ** (-(zone - 1))
        space = float(n) ** k_prime * float(q - 1) ** (k_prime - 1)
    else:
        n_eff = n * (q - 1)
        eps = math.log(m) / math.log(n_eff)
        low, mid, high = zone, k / 2 + k_prime / 4, float(k_prime)
        pairs = m**2 * float(n_eff) ** (-zone)
        space = float(n_eff) ** k_prime
    if eps <= min(low, mid):
        return LweRegime(bullet=1, aggregates=False, predicted_m=pairs, description="few pairs, theta' = f(theta)")
    if eps <= low:
        return LweRegime(bullet=2, aggregates=True, predicted_m=space, description="aggregate many pairs per vector")
    if eps <= high:
        return LweRegime(bullet=3, aggregates=False, predicted_m=float(m), description="m' ~ m, theta' = f(theta)")
    return LweRegime(bullet=4, aggregates=True, predicted_m=space, description="aggregate, m' ~ n_eff^k'")


def _all_pairs_within_groups(
    keys: np.ndarray, rng: Optional[np.random.Generator]
) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint pairs of rows sharing a key; rows are shuffled first when an rng is given."""
    if keys.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    order = rng.permutation(keys.shape[0]) if rng is not None else np.arange(keys.shape[0])
    _, inverse, counts = np.unique(keys[order], axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    grouped = order[np.argsort(inverse, kind="stable")]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    position = np.arange(keys.shape[0]) - np.repeat(starts, counts)
    size = np.repeat(counts, counts)
    first = (position % 2 == 0) & (position + 1 < size)
    left = grouped[first]
    right = grouped[np.flatnonzero(first) + 1]
    return left, right


def combination_pairs(
    instance: Instance,
    k_prime: int,
    n_prime: int,
    rng: Optional[np.random.Generator],
    normalize: bool = False,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Differences c_s - c_t, Y_s - Y_t of equations sharing a cancellation vector on range(n', n).

    Only pairs whose difference is supported on exactly k' coordinates of range(n') are kept.
    Returns the sorted supports, coefficients, values and the (s, t) identifiers.
    """
    spec = instance.spec
    assert spec.q is not None and instance.coef is not None
    q, half, zone = spec.q, k_prime // 2, spec.k - k_prime // 2
    rows = np.flatnonzero((instance.idx >= n_prime).sum(axis=1) == zone) if instance.m else np.zeros(0, int)
    idx, coef, vals, ids = instance.idx[rows], instance.coef[rows], instance.vals[rows], instance.ids[rows]
    if normalize and rows.shape[0]:
        coef, vals = normalize_equations(coef, vals, q, column=half)
    keys = np.concatenate([idx[:, half:], coef[:, half:]], axis=1)
    left, right = _all_pairs_within_groups(keys, rng)
    union = np.concatenate([idx[left, :half], idx[right, :half]], axis=1)
    diff_coef = np.concatenate([coef[left, :half], (q - coef[right, :half]) % q], axis=1)
    order = np.argsort(union, axis=1)
    union = np.take_along_axis(union, order, axis=1)
    diff_coef = np.take_along_axis(diff_coef, order, axis=1)
    disjoint = np.all(np.diff(union, axis=1) > 0, axis=1)
    diff_vals = (vals[left] - vals[right]) % q
    pair_ids = np.stack([ids[left], ids[right]], axis=1)
    return union[disjoint], diff_coef[disjoint], diff_vals[disjoint], pair_ids[disjoint]


def discr_eqcomb_lwe(
    instance: Instance,
    k_prime: int,
    rng: np.random.Generator,
    kappa: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    """Subtract LWE equations whose coefficients agree on the cancellation zone."""
    spec = instance.spec
    stage = "discr_eqcomb_lwe"
    if spec.family != Family.LWE:
        raise ParameterError(f"{stage} needs an LWE instance")
    assert spec.q is not None and instance.coef is not None
    q, k, n = spec.q, spec.k, spec.n
    family = NoiseFamily.from_spec(spec)
    uniform = family.kind == NoiseKind.UNIFORM
    if k_prime < 2 or k_prime % 2 or k_prime > 2 * k:
        raise AdmissibilityError(f"k' even with 2 <= k' <= 2k (k'={k_prime}, k={k})", stage)
    if uniform and k_prime >= 2 * k:
        raise AdmissibilityError(f"k' < 2k for uniform noise (k'={k_prime}, k={k})", stage)
    half, zone = k_prime // 2, k - k_prime // 2
    n_prime = kappa_dimension(n, kappa)
    if n_prime < k_prime or n - n_prime < zone:
        raise AdmissibilityError(f"kappa*n >= k' and the cancellation zone holds {zone} indices", stage)

    union, diff_coef, diff_vals, pair_ids = combination_pairs(instance, k_prime, n_prime, rng, normalize=uniform)

    zone_classes = math.comb(n - n_prime, zone) * (q - 1) ** (zone - 1 if uniform else zone)
    rate = spec.m * math.comb(n_prime, half) / math.comb(n, k) / (q - 1) ** (zone - 1 if uniform else zone)
    disjoint_prob = math.comb(n_prime - half, half) / math.comb(n_prime, half)
    expected = zone_classes * _expected_half_pairs(rate) * disjoint_prob
    B_Z = max(1, math.floor(settings.SAFETY_FACTOR * expected))
    out_space = math.comb(n_prime, k_prime) * (q - 1) ** (k_prime - 1 if uniform else k_prime)
    regime = lwe_regime(k, k_prime, n, q, max(spec.m, 1), uniform)
    differenced = family.difference()
    constants: Dict[str, Any] = {
        "kappa": n_prime / n,
        "n_prime": n_prime,
        "expected_pairs": expected,
        "recorded": int(union.shape[0]),
        "B_Z": B_Z,
        "output_space": out_space,
        "regime": regime.bullet,
        "predicted_m": regime.predicted_m,
        "normalized": uniform,
    }

    if B_Z <= out_space:
        wanted = int(rng.poisson(B_Z))
        if wanted > union.shape[0]:
            logger.warning(f"{stage}: only {union.shape[0]} combined equations for a target of {wanted}")
        keep = np.sort(rng.choice(union.shape[0], size=min(wanted, union.shape[0]), replace=False))
        out_family = differenced
        out_idx, out_coef, out_vals, parents = union[keep], diff_coef[keep], diff_vals[keep], pair_ids[keep]
    else:
        cap = poisson_cap(n)
        B_obs = max(1, math.floor(settings.SAFETY_FACTOR * expected / (out_space * cap)))
        out_family = differenced.aggregated(B_obs)
        out_idx, out_coef, out_vals, parents, short = _aggregate_equations(
            union, diff_coef, diff_vals, pair_ids, differenced, B_obs, uniform, rng
        )
        constants.update({"B_obs": B_obs, "C_pois": cap, "short_vectors": short})

    output_spec = spec.derive(
        k=k_prime,
        n=n_prime,
        noise=out_family.params,
        count_mode=CountMode.POISSON,
        sampling=Sampling.WITH_REPL,
        m_value=int(out_idx.shape[0]),
    )
    output = Instance(spec=output_spec, idx=out_idx, vals=out_vals, coef=out_coef, parents=parents)
    report = make_report(
        stage,
        spec,
        output_spec,
        SignalTransform.restrict(n, n_prime),
        notes=[regime.description],
        **constants,
    )
    return output, report


def _aggregate_equations(
    idx: np.ndarray,
    coef: np.ndarray,
    vals: np.ndarray,
    pair_ids: np.ndarray,
    family: NoiseFamily,
    size: int,
    uniform: bool,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Pois(1) aggregated equations per observed coefficient vector, each from exactly `size` observations.

    Returns the equations and the number of coefficient vectors that ran short.
    """
    q = family.q
    if uniform and idx.shape[0]:
        coef, vals = normalize_equations(coef, vals, q)
    keys = np.concatenate([idx, coef], axis=1)
    out_idx, out_coef, out_vals, parents = [], [], [], []
    short = 0
    if keys.shape[0]:
        order = rng.permutation(keys.shape[0])
        _, inverse, counts = np.unique(keys[order], axis=0, return_inverse=True, return_counts=True)
        grouped = order[np.argsort(inverse.reshape(-1), kind="stable")]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        for start, count in zip(starts.tolist(), counts.tolist()):
            members = grouped[start : start + count]
            copies = int(rng.poisson(1))
            for chunk in range(copies):
                chosen = members[chunk * size : (chunk + 1) * size]
                if chosen.shape[0] < size:
                    short += 1
                    break
                out_idx.append(idx[chosen[0]])
                out_coef.append(coef[chosen[0]])
                out_vals.append(aggregate(family, vals[chosen], rng))
                parents.append(pair_ids[chosen].reshape(-1))
    if short:
        logger.warning(f"{short} coefficient vectors had fewer than {size} observations, their aggregates were dropped")
    k = idx.shape[1]
    if not out_idx:
        empty = np.zeros((0, k), dtype=np.int64)
        return empty, empty, np.zeros(0, dtype=np.int64), np.zeros((0, 2 * size), dtype=np.int64), short
    out_coef_arr = np.array(out_coef)
    out_vals_arr = np.array(out_vals, dtype=np.int64)
    if uniform:
        scale = rng.integers(1, q, size=out_vals_arr.shape[0])
        out_coef_arr = (out_coef_arr * scale[:, None]) % q
        out_vals_arr = (out_vals_arr * scale) % q
    return np.array(out_idx), out_coef_arr, out_vals_arr, np.array(parents), short


class CollisionStats(BaseModel):  # type: ignore
    pairs: int = Field(description="Disjoint colliding pairs N")
    agreements: int = Field(description="Pairs whose values agree")

    @property
    def ratio(self) -> float:
        return self.agreements / self.pairs if self.pairs else 0.0


def collision_statistics(instance: Instance, normalize: Optional[bool] = None) -> CollisionStats:
    """Pair equations with equal coefficient vectors and count value agreements."""
    spec = instance.spec
    if spec.family != Family.LWE:
        raise ParameterError("Collision statistics need an LWE instance; convert XOR with xor_as_lwe")
    assert spec.q is not None and instance.coef is not None
    if normalize is None:
        normalize = spec.noise is not None and spec.noise.kind == NoiseKind.UNIFORM
    coef, vals = instance.coef, instance.vals
    if normalize:
        coef, vals = normalize_equations(coef, vals, spec.q)
    left, right = _all_pairs_within_groups(np.concatenate([instance.idx, coef], axis=1), None)
    return CollisionStats(pairs=int(left.shape[0]), agreements=int(np.sum(vals[left] == vals[right])))


def collision_detect(instance: Instance, T: float) -> Verdict:
    stats = collision_statistics(instance)
    if stats.pairs == 0:
        logger.info("No collisions found, answering null")
        return Verdict.NULL
    return Verdict.PLANTED if stats.ratio >= T else Verdict.NULL


def threshold_from_count(expected_pairs: float, q: int) -> float:
    if expected_pairs <= 0:
        raise ParameterError("The expected number of collisions must be positive")
    return 1 / q + 4 * math.sqrt(1 / (expected_pairs * q))


class CollisionPlan(BaseModel):  # type: ignore
    q: int
    classes: int = Field(description="Number of distinguishable coefficient vectors")
    expected_pairs: float = Field(description="Expected number of disjoint colliding pairs")
    T: float = Field(description="Agreement-ratio threshold")
    lhs: float
    bound: float
    feasible: bool
    condition: str


def collision_plan(spec: ModelSpec) -> CollisionPlan:
    family = NoiseFamily.from_spec(spec)
    q, k, n, m = family.q, spec.k, spec.n, spec.m
    uniform = family.kind == NoiseKind.UNIFORM
    classes = math.comb(n, k) * (q - 1) ** (k - 1 if uniform else k)
    expected = classes * _expected_half_pairs(m / classes)
    T = threshold_from_count(expected, q) if expected > 0 else 1.0
    params = family.params
    if uniform:
        assert params.delta is not None
        lhs = m * params.delta**2
        bound = n ** (k / 2) * (q - 1) ** (k / 2 - 1)
        condition = "m delta^2 >= n^(k/2) (q-1)^(k/2-1)"
    elif family.kind == NoiseKind.DISCRETE_GAUSS:
        assert params.s is not None
        lhs = float(m)
        bound = n ** (k / 2) * (q - 1) ** (k / 2) * math.sqrt(max(params.s, 1.0))
        condition = "m >= n^(k/2) (q-1)^(k/2) max(s, 1)^(1/2)"
    else:
        lhs = m * (family.collision_probability() - 1 / q)
        bound = n ** (k / 2) * (q - 1) ** ((k - 1) / 2)
        condition = "m (||chi||^2 - 1/q) >= n^(k/2) (q-1)^((k-1)/2)"
    return CollisionPlan(
        q=q,
        classes=classes,
        expected_pairs=expected,
        T=T,
        lhs=lhs,
        bound=bound,
        feasible=lhs >= bound,
        condition=condition,
    )


def collision_threshold(spec: ModelSpec) -> float:
    return collision_plan(spec).T


def collision_sample_size(spec: ModelSpec) -> int:
    """Smallest m meeting the feasibility bound, times ln of the number of coefficient classes."""
    unit = collision_plan(spec.derive(m_value=1))
    if unit.lhs <= 0:
        raise ParameterError("The noise law gives colliding equations no agreement advantage")
    return math.ceil(unit.bound / unit.lhs * max(1.0, math.log(unit.classes)))


def lwe_view_spec(spec: ModelSpec, m: Optional[int] = None) -> ModelSpec:
    """The Z_2 LWE spec an XOR spec is equivalent to."""
    if spec.family != Family.XOR:
        raise ParameterError("Only XOR specs have a Z_2 view")
    bias = min(1.0, max(0.0, spec.delta))
    return spec.derive(
        family=Family.LWE,
        q=2,
        noise=NoiseParams(kind=NoiseKind.UNIFORM, delta=bias),
        m_value=spec.m if m is None else m,
        delta_value=spec.delta,
    )


def xor_as_lwe(instance: Instance) -> Instance:
    """View an XOR instance as LWE over Z_2: bits (1 - v) / 2 with all-ones coefficients."""
    return Instance(
        spec=lwe_view_spec(instance.spec, m=instance.m),
        idx=instance.idx,
        vals=(1 - instance.vals) // 2,
        coef=np.ones_like(instance.idx),
        ids=instance.ids,
        parents=instance.parents,
    )


def signal_bits(signal: Signal) -> Signal:
    return Signal(x=(1 - signal.x) // 2, q=2)

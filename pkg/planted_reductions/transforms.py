import logging
import math
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from planted_reductions.errors import AdmissibilityError, ParameterError
from planted_reductions.kernels import (
    GaussianizeParams,
    attenuate_gauss,
    attenuate_sign,
    clone_depth,
    clone_scale,
    clone_values,
    discretize_bias,
    discretize_many,
    gaussianize_many,
)
from planted_reductions.models import (
    CountMode,
    Family,
    IndexSpace,
    Instance,
    ModelSpec,
    Sampling,
    SignalTransform,
    count_from_profile,
    format_rational,
    random_signs,
    sample_index_terms,
)
from planted_reductions.rng import draw_key, hash_signs
from planted_reductions.settings import settings

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON-native view of a ledger constant."""
    if isinstance(value, Fraction):
        return format_rational(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    return value


RECOVERY = "recovery"
DETECTION = "detection"


class ReductionReport(BaseModel):  # type: ignore
    name: str = Field(description="Reduction that produced the output")
    input_spec: ModelSpec
    output_spec: ModelSpec
    signal_transform: SignalTransform
    constants: Dict[str, Any] = Field(default_factory=dict)
    tv_budget_note: str = ""
    notes: List[str] = Field(default_factory=list)
    stages: List["ReductionReport"] = Field(default_factory=list)

    @field_validator("constants")
    @classmethod
    def _plain_constants(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        return {str(key): _plain(item) for key, item in value.items()}

    @model_validator(mode="after")
    def _check(self) -> "ReductionReport":
        assert (
            self.signal_transform.n_out == self.output_spec.n
        ), f"{self.name}: transform ends in dimension {self.signal_transform.n_out}, spec has {self.output_spec.n}"
        return self


def make_report(
    name: str,
    input_spec: ModelSpec,
    output_spec: ModelSpec,
    signal_transform: Optional[SignalTransform] = None,
    stages: Optional[List[ReductionReport]] = None,
    notes: Optional[List[str]] = None,
    tv_budget_note: str = "",
    **constants: Any,
) -> ReductionReport:
    return ReductionReport(
        name=name,
        input_spec=input_spec,
        output_spec=output_spec,
        signal_transform=signal_transform or SignalTransform.identity(input_spec.n),
        constants=constants,
        stages=stages or [],
        notes=notes or [],
        tv_budget_note=tv_budget_note,
    )


def compose_reports(
    name: str,
    stages: Sequence[ReductionReport],
    signal_transform: Optional[SignalTransform] = None,
    input_spec: Optional[ModelSpec] = None,
    output_spec: Optional[ModelSpec] = None,
    notes: Optional[List[str]] = None,
    **constants: Any,
) -> ReductionReport:
    """Chain stage reports; the signal transform composes left to right unless given."""
    assert stages, "Nothing to compose"
    if signal_transform is None:
        signal_transform = SignalTransform.compose([stage.signal_transform for stage in stages])
    merged: Dict[str, Any] = dict(constants)
    for position, stage in enumerate(stages):
        for key, value in stage.constants.items():
            merged[f"{position}.{stage.name}.{key}"] = value
    return ReductionReport(
        name=name,
        input_spec=input_spec or stages[0].input_spec,
        output_spec=output_spec or stages[-1].output_spec,
        signal_transform=signal_transform,
        constants=merged,
        stages=list(stages),
        notes=[note for stage in stages for note in stage.notes] + (notes or []),
    )


def _fresh(
    spec: ModelSpec,
    idx: np.ndarray,
    vals: np.ndarray,
    parents: Optional[np.ndarray] = None,
    coef: Optional[np.ndarray] = None,
) -> Instance:
    return Instance(spec=spec, idx=idx, vals=vals, coef=coef, parents=parents)


def _realized(spec: ModelSpec, **changes: Any) -> ModelSpec:
    """Derive a spec keeping the realized count and bias unless they are overridden."""
    changes.setdefault("m_value", spec.m_value)
    changes.setdefault("delta_value", spec.delta_value)
    return spec.derive(**changes)


def gaussianize_instance(
    instance: Instance,
    rng: np.random.Generator,
    C: Optional[float] = None,
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.family != Family.XOR:
        raise ParameterError(f"Gaussianize needs an XOR instance, got {spec.family.value}")
    delta = spec.delta
    signs = instance.vals
    notes = []
    cap = settings.GAUSSIANIZE_BIAS_CAP
    if delta >= cap:
        signs = attenuate_sign(signs, cap / delta, rng)
        notes.append(f"bias {delta:.6g} attenuated to {cap} before gaussianizing")
        delta = cap
    params = GaussianizeParams(delta=delta, n=max(spec.n, 2), C=C or settings.GAUSSIANIZE_C)
    values, fallbacks = gaussianize_many(signs, params, rng)
    output_spec = _realized(spec, family=Family.GAUSS, delta_value=params.mu)
    report = make_report(
        "gaussianize",
        spec,
        output_spec,
        notes=notes,
        tv_budget_note=f"kernel TV <= n^-{params.K} per entry",
        mu=params.mu,
        radius=params.radius,
        iterations=params.iterations,
        fallbacks=fallbacks,
    )
    output = Instance(spec=output_spec, idx=instance.idx, vals=values, ids=instance.ids, parents=instance.parents)
    return output, report


def discretize_instance(instance: Instance, rng: np.random.Generator) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.family != Family.GAUSS:
        raise ParameterError(f"Discretize needs a Gaussian instance, got {spec.family.value}")
    bias = discretize_bias(spec.delta)
    output_spec = _realized(spec, family=Family.XOR, delta_value=bias)
    output = Instance(
        spec=output_spec,
        idx=instance.idx,
        vals=discretize_many(instance.vals, rng),
        ids=instance.ids,
        parents=instance.parents,
    )
    return output, make_report("discretize", spec, output_spec, bias=bias)


def set_count_mode(
    instance: Instance,
    target: CountMode,
    rng: np.random.Generator,
    m: Optional[int] = None,
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    m = spec.m if m is None else m
    if target == CountMode.POISSON:
        keep = min(instance.m, int(rng.poisson(m / 2)))
    else:
        keep = min(m // 2, instance.m)
    if keep < m // 2 and target == CountMode.FIXED:
        logger.warning(f"Only {instance.m} samples available for a fixed count of {m // 2}")
    positions = np.sort(rng.choice(instance.m, size=keep, replace=False)) if keep else np.zeros(0, int)
    output_spec = _realized(spec, count_mode=target, m_value=m // 2)
    report = make_report(f"count_mode_{target.value}", spec, output_spec, kept=keep, target_mean=m / 2)
    return instance.select(positions, spec=output_spec), report


def convert_index_order(
    instance: Instance, direction: IndexSpace, rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.sampling != Sampling.WITH_REPL:
        raise AdmissibilityError("index order conversion needs with-replacement sampling")
    if direction not in (IndexSpace.SET, IndexSpace.TUPLE) or spec.index_space == IndexSpace.MULTISET:
        raise ParameterError("Index order conversion is between sets and tuples")
    idx = instance.idx
    if direction != spec.index_space and instance.m:
        if direction == IndexSpace.TUPLE:
            order = np.argsort(rng.random(idx.shape), axis=1)
            idx = np.take_along_axis(idx, order, axis=1)
        else:
            idx = np.sort(idx, axis=1)
    output_spec = _realized(spec, index_space=direction)
    output = Instance(
        spec=output_spec, idx=idx, vals=instance.vals, coef=instance.coef, ids=instance.ids, parents=instance.parents
    )
    return output, make_report(f"to_{direction.value}", spec, output_spec)


def _to_without_replacement(
    instance: Instance, epsilon: Optional[Fraction], limit: Optional[int], rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.sampling != Sampling.WITH_REPL:
        raise ParameterError("Conversion to without-replacement needs a with-replacement instance")
    epsilon = spec.epsilon if epsilon is None else epsilon
    shuffled = rng.permutation(instance.m)
    if instance.m:
        _, first = np.unique(instance.idx[shuffled], axis=0, return_index=True)
        representatives = shuffled[first]
    else:
        representatives = np.zeros(0, dtype=np.int64)
    budget = count_from_profile(spec.k, spec.n, epsilon) // 4 if limit is None else limit
    keep = min(budget, representatives.shape[0])
    chosen = np.sort(rng.choice(representatives, size=keep, replace=False)) if keep else representatives[:0]
    output_spec = _realized(spec, sampling=Sampling.WITHOUT_REPL, count_mode=CountMode.FIXED, m_value=keep)
    report = make_report(
        "to_without_replacement", spec, output_spec, distinct=int(representatives.shape[0]), budget=budget
    )
    return instance.select(chosen, spec=output_spec), report


def _to_with_replacement(
    instance: Instance,
    space_size: Optional[int],
    purpose: str,
    rng: np.random.Generator,
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.sampling != Sampling.WITHOUT_REPL:
        raise ParameterError("Conversion to with-replacement needs a without-replacement instance")
    if purpose == DETECTION and spec.epsilon < 1:
        raise AdmissibilityError("with-replacement conversion preserves detection only at eps = 1")
    space_size = spec.space_size if space_size is None else space_size
    total = instance.m
    labels = rng.integers(0, space_size, size=total)
    unique, inverse, multiplicity = np.unique(labels, return_inverse=True, return_counts=True)
    copies = int(multiplicity.max()) if total else 1
    occurrence = np.zeros(total, dtype=np.int64)
    if total:
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(multiplicity)[:-1]])
        occurrence[order] = np.arange(total) - np.repeat(starts, multiplicity)
    source = inverse

    stages: List[ReductionReport] = []
    work = instance
    if copies > 1 and spec.family == Family.XOR:
        work, stage = gaussianize_instance(instance, rng)
        stages.append(stage)
    if copies > 1:
        assert work.spec.family == Family.GAUSS, "Only Gaussian and XOR instances can be cloned"
        cloned = clone_values(work.vals[: unique.shape[0]], copies, rng)
        vals = cloned[occurrence, source]
        delta = work.spec.delta * clone_scale(copies)
        if spec.family == Family.XOR:
            vals = discretize_many(vals, rng)
            delta = discretize_bias(delta)
    else:
        vals = instance.vals[source]
        delta = spec.delta

    output_spec = _realized(
        spec, sampling=Sampling.WITH_REPL, count_mode=CountMode.FIXED, m_value=total, delta_value=delta
    )
    output = Instance(
        spec=output_spec,
        idx=instance.idx[source],
        vals=vals,
        coef=None if instance.coef is None else instance.coef[source],
        parents=instance.ids[source][:, None],
    )
    notes = [] if spec.epsilon == 1 else ["valid for recovery; detection is preserved only at eps = 1"]
    report = make_report(
        "to_with_replacement",
        spec,
        output_spec,
        stages=stages,
        notes=notes,
        max_multiplicity=copies,
        clone_depth=clone_depth(copies),
        space_size=space_size,
        purpose=purpose,
    )
    return output, report


def convert_sampling(
    instance: Instance,
    target: Sampling,
    rng: np.random.Generator,
    epsilon: Optional[Fraction] = None,
    space_size: Optional[int] = None,
    purpose: str = RECOVERY,
    limit: Optional[int] = None,
) -> Tuple[Instance, ReductionReport]:
    if target == Sampling.WITHOUT_REPL:
        return _to_without_replacement(instance, epsilon, limit, rng)
    return _to_with_replacement(instance, space_size, purpose, rng)


def adjust_samples(
    instance: Instance, m_target: int, rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.family == Family.LWE:
        raise ParameterError("Sample adjustment is defined for XOR and Gaussian instances")
    m = spec.m
    if m_target > m:
        extra = int(rng.poisson(m_target - m))
        idx = sample_index_terms(spec.index_space, Sampling.WITH_REPL, spec.n, spec.k, extra, rng)
        if spec.family == Family.XOR:
            noise = random_signs(extra, rng)
        else:
            noise = rng.standard_normal(extra)
        order = rng.permutation(instance.m + extra)
        next_id = int(instance.ids.max()) + 1 if instance.m else 0
        output_spec = _realized(spec, m_value=m_target, delta_value=spec.delta * m / m_target)
        output = Instance(
            spec=output_spec,
            idx=np.concatenate([instance.idx, idx])[order],
            vals=np.concatenate([instance.vals, noise])[order],
            ids=np.concatenate([instance.ids, np.arange(next_id, next_id + extra)])[order],
        )
        report = make_report("adjust_samples", spec, output_spec, noise_entries=extra, ratio=m / m_target)
        return output, report
    keep = rng.random(instance.m) < (m_target / m if m else 0.0)
    output_spec = _realized(spec, m_value=m_target)
    report = make_report("adjust_samples", spec, output_spec, kept=int(keep.sum()), ratio=m_target / max(m, 1))
    return instance.select(np.flatnonzero(keep), spec=output_spec), report


def adjust_density(
    instance: Instance, epsilon_prime: Fraction, rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    """Move to density eps' by adding noise or thinning; eta' = eta + k|eps - eps'| / 2."""
    spec = instance.spec
    m_prime = count_from_profile(spec.k, spec.n, epsilon_prime)
    adjusted, stage = adjust_samples(instance, m_prime, rng)
    eta_prime = spec.eta + Fraction(spec.k) * abs(spec.epsilon - epsilon_prime) / 2
    output_spec = spec.derive(epsilon=epsilon_prime, eta=eta_prime, delta_value=adjusted.spec.delta)
    report = compose_reports("adjust_density", [stage], output_spec=output_spec, epsilon_prime=str(epsilon_prime))
    return adjusted.with_spec(output_spec), report


def restrict_instance(instance: Instance, n_prime: int) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if not 1 <= n_prime <= spec.n:
        raise ParameterError(f"Cannot restrict dimension {spec.n} to {n_prime}")
    inside = np.flatnonzero(np.all(instance.idx < n_prime, axis=1)) if instance.m else np.zeros(0, int)
    output_spec = _realized(spec, n=n_prime, m_value=int(inside.shape[0]))
    report = make_report(
        "restrict", spec, output_spec, SignalTransform.restrict(spec.n, n_prime), kept=int(inside.shape[0])
    )
    return instance.select(inside, spec=output_spec), report


def split_instance(
    instance: Instance, copies: int, rng: np.random.Generator
) -> Tuple[List[Instance], ReductionReport]:
    spec = instance.spec
    if copies < 1:
        raise ParameterError(f"Cannot split into {copies} parts")
    if spec.sampling != Sampling.WITH_REPL:
        raise AdmissibilityError("splitting needs with-replacement sampling")
    if spec.count_mode == CountMode.POISSON:
        route = rng.integers(0, copies, size=instance.m)
        parts = [np.flatnonzero(route == part) for part in range(copies)]
    else:
        parts = [np.sort(part) for part in np.array_split(rng.permutation(instance.m), copies)]
    output_spec = _realized(spec, m_value=spec.m // copies)
    outputs = [instance.select(part, spec=output_spec) for part in parts]
    report = make_report("split", spec, output_spec, copies=copies, sizes=[int(p.shape[0]) for p in parts])
    return outputs, report


def clone_instance(
    instance: Instance, copies: int, rng: np.random.Generator
) -> Tuple[List[Instance], ReductionReport]:
    spec = instance.spec
    if copies < 1:
        raise ParameterError(f"Cannot clone into {copies} copies")
    if copies == 1:
        return [instance], make_report("clone", spec, spec, copies=1)
    stages: List[ReductionReport] = []
    work = instance
    if spec.family == Family.XOR:
        work, stage = gaussianize_instance(instance, rng)
        stages.append(stage)
    elif spec.family != Family.GAUSS:
        raise ParameterError("Cloning is defined for XOR and Gaussian instances")
    cloned = clone_values(work.vals, copies, rng)
    delta = work.spec.delta * clone_scale(copies)
    if spec.family == Family.XOR:
        delta = discretize_bias(delta)
        cloned = np.stack([discretize_many(row, rng) for row in cloned])
    output_spec = _realized(spec, delta_value=delta)
    outputs = [
        Instance(spec=output_spec, idx=instance.idx, vals=row, ids=instance.ids, parents=instance.parents)
        for row in cloned
    ]
    report = make_report(
        "clone", spec, output_spec, stages=stages, copies=copies, depth=clone_depth(copies), bias=delta
    )
    return outputs, report


def _series_power(base: List[Fraction], exponent: int, degree: int) -> List[Fraction]:
    result = [Fraction(1)] + [Fraction(0)] * degree
    while exponent:
        if exponent & 1:
            result = _series_product(result, base, degree)
        base = _series_product(base, base, degree)
        exponent >>= 1
    return result


def _series_product(left: List[Fraction], right: List[Fraction], degree: int) -> List[Fraction]:
    out = [Fraction(0)] * (degree + 1)
    for i, a in enumerate(left):
        if a:
            for j in range(degree + 1 - i):
                out[i + j] += a * right[j]
    return out


@lru_cache(maxsize=1024)
def stratum_weight(n: int, k: int, odd: int) -> Fraction:
    """Probability that a mu-distributed k-multiset of range(n) has exactly `odd` odd-multiplicity letters."""
    if odd > min(n, k) or (k - odd) % 2:
        return Fraction(0)
    sinh = [Fraction(1, math.factorial(d)) if d % 2 else Fraction(0) for d in range(k + 1)]
    cosh = [Fraction(0) if d % 2 else Fraction(1, math.factorial(d)) for d in range(k + 1)]
    series = _series_product(_series_power(sinh, odd, k), _series_power(cosh, n - odd, k), k)
    return math.comb(n, odd) * math.factorial(k) * series[k] / Fraction(n**k)


def odd_parts(idx: np.ndarray) -> np.ndarray:
    """Mask of the entries that survive parity cancellation in sorted multiset rows."""
    m, k = idx.shape
    run_position = np.zeros((m, k), dtype=np.int64)
    for j in range(1, k):
        run_position[:, j] = np.where(idx[:, j] == idx[:, j - 1], run_position[:, j - 1] + 1, 0)
    run_end = np.ones((m, k), dtype=bool)
    if k > 1:
        run_end[:, :-1] = idx[:, 1:] != idx[:, :-1]
    return run_end & (run_position % 2 == 0)


def _stratum_epsilon(k: int, order: int, epsilon: Fraction) -> Fraction:
    return min(Fraction(k) * epsilon / order, Fraction(1))


def _is_dense(k: int, order: int, epsilon: Fraction) -> bool:
    return Fraction(k) * epsilon / order > 1


def decompose_full(
    instance: Instance, rng: np.random.Generator
) -> Tuple[List[Instance], ReductionReport]:
    """Split a FULL instance into orders k, k-2, ... by cancelling repeated index pairs."""
    spec = instance.spec
    if spec.index_space != IndexSpace.MULTISET:
        raise ParameterError("decompose_full needs a multiset (FULL) instance")
    stages: List[ReductionReport] = []
    work = instance
    if spec.family == Family.XOR:
        work, stage = gaussianize_instance(instance, rng)
        stages.append(stage)
    elif spec.family != Family.GAUSS:
        raise ParameterError("decompose_full is defined for XOR and Gaussian instances")
    k, n = spec.k, spec.n
    keep = odd_parts(work.idx) if work.m else np.zeros((0, k), dtype=bool)
    odd_count = keep.sum(axis=1)

    outputs: List[Instance] = []
    constants: Dict[str, Any] = {}
    for r in range((k - 1) // 2 + 1):
        order = k - 2 * r
        rows = np.flatnonzero(odd_count == order)
        base = work.idx[rows][keep[rows]].reshape(-1, order)
        expected = float(spec.m * stratum_weight(n, k, order))
        epsilon_r = _stratum_epsilon(k, order, spec.epsilon)
        stratum_spec = spec.derive(
            family=Family.GAUSS,
            k=order,
            epsilon=epsilon_r,
            index_space=IndexSpace.SET,
            sampling=Sampling.WITH_REPL,
            count_mode=CountMode.FIXED,
        )
        if not _is_dense(k, order, spec.epsilon):
            stratum_spec = stratum_spec.derive(m_value=int(rows.shape[0]), delta_value=work.spec.delta)
            outputs.append(
                _fresh(stratum_spec, base, work.vals[rows], parents=work.ids[rows][:, None])
            )
            constants[f"E_{r}"] = expected
            continue

        per_set = expected / math.comb(n, order)
        aggregate = max(1, math.floor(settings.SAFETY_FACTOR * per_set))
        terms, sources = _aggregation_groups(base, rows, aggregate, rng)
        observed = np.unique(base, axis=0).shape[0] if rows.size else 0
        if terms.shape[0] < observed:
            logger.warning(f"Stratum r={r}: some index sets have fewer than {aggregate} observations")
        values = work.vals[sources].sum(axis=1) / math.sqrt(aggregate)
        averaged_spec = stratum_spec.derive(
            sampling=Sampling.WITHOUT_REPL,
            m_value=int(terms.shape[0]),
            delta_value=work.spec.delta * math.sqrt(aggregate),
        )
        averaged = _fresh(averaged_spec, terms, values, parents=work.ids[sources])
        resampled, stage = convert_sampling(
            averaged, Sampling.WITH_REPL, rng, space_size=math.comb(n, order), purpose=DETECTION
        )
        stages.append(stage)
        assert averaged.parents is not None and resampled.parents is not None
        outputs.append(
            _fresh(resampled.spec, resampled.idx, resampled.vals, parents=averaged.parents[resampled.parents[:, 0]])
        )
        constants.update({f"E_{r}": expected, f"N_{r}": aggregate, f"dense_{r}": True})

    report = make_report(
        "decompose_full",
        spec,
        outputs[0].spec,
        stages=stages,
        strata=[out.spec.model_dump(mode="json") for out in outputs],
        **constants,
    )
    return outputs, report


def _aggregation_groups(
    terms: np.ndarray, rows: np.ndarray, size: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct terms observed at least `size` times, with a random `size`-subset of their rows."""
    if terms.shape[0] == 0:
        return terms, np.zeros((0, size), dtype=np.int64)
    shuffled = rng.permutation(terms.shape[0])
    unique, inverse, counts = np.unique(terms[shuffled], axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    full = np.flatnonzero(counts >= size)
    grouped = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    members = grouped[starts[full][:, None] + np.arange(size)[None, :]]
    return unique[full], rows[shuffled][members]


def _padding_acceptance(base: np.ndarray, letters: np.ndarray) -> np.ndarray:
    """Acceptance weight prod 2^b b!/(2b)! (outside base) or 2^b b!/(2b+1)! (inside base)."""
    cnt, r = letters.shape
    weight = np.ones(cnt)
    sorted_letters = np.sort(letters, axis=1)
    run_position = np.zeros((cnt, r), dtype=np.int64)
    for j in range(1, r):
        run_position[:, j] = np.where(sorted_letters[:, j] == sorted_letters[:, j - 1], run_position[:, j - 1] + 1, 0)
    inside = (base[:, :, None] == sorted_letters[:, None, :]).any(axis=1)
    # the b-th repeat of a letter multiplies the weight by 1/(2b-1) outside the base, 1/(2b+1) inside
    b = run_position + 1
    factor = np.where(inside, 1.0 / (2 * b + 1), 1.0 / (2 * b - 1))
    weight *= factor.prod(axis=1)
    return weight


def pad_with_pairs(base: np.ndarray, r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted k-multisets whose odd part is `base`, drawn from mu conditioned on that odd part."""
    cnt = base.shape[0]
    if r == 0 or cnt == 0:
        return np.sort(base, axis=1) if cnt else np.zeros((0, base.shape[1] + 2 * r), dtype=np.int64)
    letters = np.zeros((cnt, r), dtype=np.int64)
    pending = np.arange(cnt)
    while pending.size:
        proposal = rng.integers(0, n, size=(pending.size, r))
        accepted = rng.random(pending.size) < _padding_acceptance(base[pending], proposal)
        letters[pending[accepted]] = proposal[accepted]
        pending = pending[~accepted]
    return np.sort(np.concatenate([base, letters, letters], axis=1), axis=1)


def compose_full(
    instances: Sequence[Instance], epsilon: Fraction, rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    """Assemble strata of orders k, k-2, ... into one FULL instance of order k at density epsilon."""
    assert instances, "Nothing to compose"
    k, n = instances[0].spec.k, instances[0].spec.n
    family = instances[0].spec.family
    for r, inst in enumerate(instances):
        if inst.spec.k != k - 2 * r or inst.spec.n != n:
            raise ParameterError(f"Stratum {r} must have order {k - 2 * r} over dimension {n}")
        if inst.spec.family != family:
            raise ParameterError("All strata must share a family")
    if family not in (Family.XOR, Family.GAUSS):
        raise ParameterError("compose_full is defined for XOR and Gaussian instances")
    dense = [_is_dense(k, k - 2 * r, epsilon) for r in range(len(instances))]
    stages: List[ReductionReport] = []
    work = list(instances)
    if family == Family.XOR and any(dense):
        converted = []
        for inst in work:
            out, stage = gaussianize_instance(inst, rng)
            converted.append(out)
            stages.append(stage)
        work = converted
    gauss = work[0].spec.family == Family.GAUSS

    m = count_from_profile(k, n, epsilon)
    blocks: List[Tuple[np.ndarray, np.ndarray, np.ndarray, float]] = []
    constants: Dict[str, Any] = {}
    for r, inst in enumerate(work):
        order = k - 2 * r
        expected = float(m * stratum_weight(n, k, order))
        constants[f"E_{r}"] = expected
        if not dense[r]:
            blocks.append((inst.idx, inst.vals, inst.ids, inst.spec.delta))
            continue
        distinct = inst
        if inst.spec.sampling == Sampling.WITH_REPL:
            distinct, stage = convert_sampling(inst, Sampling.WITHOUT_REPL, rng, limit=inst.m)
            stages.append(stage)
        per_set = expected / math.comb(n, order)
        copies = max(1, round(2 * per_set))
        multiplicity = np.minimum(copies, rng.poisson(copies / 2, size=distinct.m))
        cloned = clone_values(distinct.vals, copies, rng)
        column = np.repeat(np.arange(distinct.m), multiplicity)
        row = np.concatenate([np.arange(c) for c in multiplicity]) if distinct.m else np.zeros(0, int)
        blocks.append(
            (
                distinct.idx[column],
                cloned[row, column],
                distinct.ids[column],
                distinct.spec.delta * clone_scale(copies),
            )
        )
        constants[f"A_{r}"] = copies

    nonempty = [block[3] for block in blocks if block[0].shape[0]]
    target = min(nonempty) if nonempty else work[0].spec.delta
    idx_parts, val_parts, parent_parts = [], [], []
    for r, (base, vals, ids, delta) in enumerate(blocks):
        if base.shape[0] == 0:
            continue
        if delta > target > 0:
            vals = attenuate_gauss(vals, target / delta, rng) if gauss else attenuate_sign(vals, target / delta, rng)
        idx_parts.append(pad_with_pairs(base, r, n, rng))
        val_parts.append(vals)
        parent_parts.append(ids)

    if idx_parts:
        idx = np.concatenate(idx_parts)
        vals = np.concatenate(val_parts)
        parents = np.concatenate(parent_parts)[:, None]
        order = rng.permutation(idx.shape[0])
        idx, vals, parents = idx[order], vals[order], parents[order]
    else:
        idx, vals, parents = np.zeros((0, k), dtype=np.int64), np.zeros(0), np.zeros((0, 1), dtype=np.int64)

    output_spec = instances[0].spec.derive(
        family=work[0].spec.family,
        epsilon=epsilon,
        index_space=IndexSpace.MULTISET,
        sampling=Sampling.WITH_REPL,
        count_mode=CountMode.FIXED,
        m_value=int(idx.shape[0]),
        delta_value=target,
    )
    output = _fresh(output_spec, idx, vals, parents=parents)
    report = make_report(
        "compose_full", instances[0].spec, output_spec, stages=stages, equalized_bias=target, **constants
    )
    if family == Family.XOR and gauss:
        output, stage = discretize_instance(output, rng)
        report = compose_reports("compose_full", [report, stage])
    return output, report


def reduce_order_factor(
    instance: Instance, a: int, rng: np.random.Generator
) -> Tuple[Instance, ReductionReport]:
    spec = instance.spec
    if spec.index_space != IndexSpace.MULTISET:
        raise ParameterError("Order reduction by a factor needs a multiset (FULL) instance")
    if a < 1 or spec.k % a:
        raise AdmissibilityError(f"a | k (a={a}, k={spec.k})")
    if spec.family not in (Family.XOR, Family.GAUSS):
        raise ParameterError("Order reduction is defined for XOR and Gaussian instances")
    k_out, n_out = spec.k // a, spec.n**a
    mask_key = draw_key(rng)
    transform = SignalTransform.tensor_power(spec.n, a, mask_key)
    if instance.m:
        order = np.argsort(rng.random(instance.idx.shape), axis=1)
        blocks = np.take_along_axis(instance.idx, order, axis=1).reshape(instance.m, k_out, a)
        codes = (blocks * (spec.n ** np.arange(a, dtype=np.int64))).sum(axis=2)
        codes = np.sort(codes, axis=1)
        mask = np.prod(hash_signs(mask_key, codes), axis=1)
    else:
        codes, mask = np.zeros((0, k_out), dtype=np.int64), np.ones(0, dtype=np.int64)
    vals = instance.vals * mask
    output_spec = _realized(spec, k=k_out, n=n_out, eta=spec.eta / a, m_value=spec.m)
    output = Instance(spec=output_spec, idx=codes, vals=vals, ids=instance.ids, parents=instance.parents)
    report = make_report("reduce_order_factor", spec, output_spec, transform, a=a, mask_key=mask_key)
    return output, report


ReductionReport.model_rebuild()

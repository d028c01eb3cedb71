import logging
import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from itertools import combinations
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from planted_reductions.eqcomb import (
    discr_eqcomb,
    discr_eqcomb_two,
    gauss_eqcomb,
    gauss_eqcomb_two,
    reduce_k_discrete,
    reduce_k_gauss,
    sparse_to_dense,
)
from planted_reductions.errors import ParameterError
from planted_reductions.lwe import (
    NoiseFamily,
    Verdict,
    aggregate,
    centered_lift,
    collision_detect,
    collision_plan,
    collision_sample_size,
    discr_eqcomb_lwe,
    lwe_view_spec,
    residuals,
    sample_lwe,
    xor_as_lwe,
)
from planted_reductions.models import (
    SIGN_ALPHABET,
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
    entry_means,
    enumerate_index_space,
    multiset_weight,
    sample_null,
    sample_planted,
    sample_signal,
)
from planted_reductions.rng import child_rng, make_rng
from planted_reductions.settings import settings
from planted_reductions.transforms import (
    RECOVERY,
    ReductionReport,
    adjust_density,
    adjust_samples,
    clone_instance,
    compose_full,
    convert_index_order,
    convert_sampling,
    decompose_full,
    discretize_instance,
    gaussianize_instance,
    make_report,
    reduce_order_factor,
    restrict_instance,
    set_count_mode,
    split_instance,
    stratum_weight,
)

logger = logging.getLogger(__name__)

KS_MIN_SAMPLES = 100
Pipeline = Callable[[Instance, np.random.Generator], Tuple[Instance, ReductionReport]]


class TestReport(BaseModel):  # type: ignore
    __test__ = False

    test: str = Field(description="Test name")
    statistic: float
    p_value: Optional[float] = Field(default=None, description="None for pass/fail checks")
    passed: bool
    sizes: Dict[str, int] = Field(default_factory=dict)
    seed: Optional[int] = None
    details: Dict[str, Any] = Field(default_factory=dict)


def _decide(p_value: float, alpha: Optional[float]) -> bool:
    alpha = settings.SIGNIFICANCE if alpha is None else alpha
    return bool(p_value > alpha)


def ks_test(
    samples: Sequence[float],
    reference_cdf: Union[Callable[[np.ndarray], np.ndarray], str] = "norm",
    name: str = "ks",
    alpha: Optional[float] = None,
    seed: Optional[int] = None,
) -> TestReport:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < KS_MIN_SAMPLES:
        raise ParameterError(f"KS test needs at least {KS_MIN_SAMPLES} samples, got {samples.shape[0]}")
    result = stats.kstest(samples, reference_cdf, method="asymp")
    return TestReport(
        test=name,
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        passed=_decide(result.pvalue, alpha),
        sizes={"samples": int(samples.shape[0])},
        seed=seed,
    )


def chi_square_test(
    observed: Sequence[int],
    probabilities: Sequence[float],
    name: str = "chi_square",
    alpha: Optional[float] = None,
    seed: Optional[int] = None,
) -> TestReport:
    """Goodness of fit of cell counts; cells with zero probability must be empty."""
    observed = np.asarray(observed, dtype=np.float64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if observed.shape != probabilities.shape:
        raise ParameterError("Observed counts and probabilities must align")
    total = observed.sum()
    if total <= 0:
        raise ParameterError("Chi-square test needs at least one observation")
    support = probabilities > 0
    if observed[~support].sum() > 0:
        return TestReport(test=name, statistic=math.inf, p_value=0.0, passed=False, sizes={"samples": int(total)})
    expected = probabilities[support] / probabilities[support].sum() * total
    result = stats.chisquare(observed[support], expected)
    return TestReport(
        test=name,
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        passed=_decide(result.pvalue, alpha),
        sizes={"samples": int(total), "cells": int(support.sum())},
        seed=seed,
    )


def binomial_test(
    successes: int,
    trials: int,
    p: float,
    name: str = "binomial",
    alpha: Optional[float] = None,
    seed: Optional[int] = None,
) -> TestReport:
    if trials < 1:
        raise ParameterError("Binomial test needs at least one trial")
    result = stats.binomtest(int(successes), int(trials), min(1.0, max(0.0, p)))
    return TestReport(
        test=name,
        statistic=successes / trials,
        p_value=float(result.pvalue),
        passed=_decide(result.pvalue, alpha),
        sizes={"samples": int(trials)},
        seed=seed,
        details={"expected": p},
    )


def poisson_count_test(
    observed: int, expected: float, name: str = "count", alpha: Optional[float] = None, seed: Optional[int] = None
) -> TestReport:
    """Two-sided Poisson test of a realized count; conservative for binomial counts."""
    if expected <= 0:
        return TestReport(test=name, statistic=observed, passed=observed == 0, seed=seed)
    p_value = min(1.0, 2 * min(stats.poisson.cdf(observed, expected), stats.poisson.sf(observed - 1, expected)))
    return TestReport(
        test=name,
        statistic=float(observed),
        p_value=float(p_value),
        passed=_decide(p_value, alpha),
        seed=seed,
        details={"expected": expected},
    )


def correlation_test(
    sequences: Dict[str, np.ndarray],
    name: str = "independence",
    alpha: Optional[float] = None,
    seed: Optional[int] = None,
) -> TestReport:
    """Pairwise Pearson correlations with a Bonferroni correction over all pairs."""
    if len(sequences) < 2:
        raise ParameterError("Independence needs at least two sequences")
    length = min(len(values) for values in sequences.values())
    if length < 3:
        raise ParameterError(f"Sequences too short for a correlation test ({length})")
    pairs = list(combinations(sequences, 2))
    worst_p, worst_r = 1.0, 0.0
    for left, right in pairs:
        a = np.asarray(sequences[left][:length], dtype=np.float64)
        b = np.asarray(sequences[right][:length], dtype=np.float64)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        r, p = stats.pearsonr(a, b)
        if p < worst_p:
            worst_p, worst_r = float(p), float(r)
    corrected = min(1.0, worst_p * len(pairs))
    return TestReport(
        test=name,
        statistic=worst_r,
        p_value=corrected,
        passed=_decide(corrected, alpha),
        sizes={"samples": length, "pairs": len(pairs)},
        seed=seed,
    )


def _aligned(instance: Instance, signal: Signal, transform: Optional[SignalTransform] = None) -> np.ndarray:
    if instance.spec.family == Family.LWE:
        raise ParameterError("Signal estimates are defined for XOR and Gaussian instances")
    if transform is None:
        means = entry_means(signal.x, instance.idx)
    else:
        means = transform.evaluate(signal.x, instance.idx)
    return instance.vals * means


def signal_estimate(
    instance: Instance, signal: Signal, transform: Optional[SignalTransform] = None
) -> Tuple[float, float]:
    """Mean of val * x'_alpha and its standard error."""
    aligned = _aligned(instance, signal, transform)
    if aligned.shape[0] < 2:
        raise ParameterError(f"Signal estimate needs at least two samples, got {aligned.shape[0]}")
    return float(aligned.mean()), float(aligned.std(ddof=1) / math.sqrt(aligned.shape[0]))


class WishartConfig(BaseModel):  # type: ignore
    d: int = Field(ge=1)
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    p_R: float = Field(default=1.0, gt=0, le=1)
    p_L: float = Field(default=1.0, gt=0, le=1)
    delta_R: float = 0.0
    delta_L: float = 0.0
    M_R: Optional[np.ndarray] = Field(default=None, description="d x n sign matrix, all ones by default")
    M_L: Optional[np.ndarray] = Field(default=None, description="d x m sign matrix, all ones by default")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check(self) -> "WishartConfig":
        for name, matrix, width in (("M_R", self.M_R, self.n), ("M_L", self.M_L, self.m)):
            if matrix is None:
                continue
            if matrix.shape != (self.d, width) or not np.all(np.abs(matrix) == 1):
                raise ParameterError(f"{name} must be a {self.d} x {width} sign matrix")
        if self.d * max(self.n, self.m) > settings.GRAM_CELL_CAP:
            raise ParameterError(f"Wishart matrices of {self.d} x {max(self.n, self.m)} exceed the cell cap")
        return self

    @property
    def psi(self) -> float:
        return self.p_R * self.p_L * self.d


def _masked(
    d: int, width: int, p: float, delta: float, signs: Optional[np.ndarray], rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    mask = (rng.random((d, width)) < p).astype(np.float64)
    mean = delta * (np.ones((d, width)) if signs is None else signs) * mask
    return mean + rng.standard_normal((d, width)) * mask, mean


def wishart_check(
    config: WishartConfig, trials: int, rng: np.random.Generator, alpha: Optional[float] = None
) -> TestReport:
    """KS of the centered scaled product psi^-1/2 X_R^T X_L against N(0, 1)."""
    if trials < 1:
        raise ParameterError("Need at least one trial")
    scale = 1 / math.sqrt(config.psi)
    off_diagonal = config.n == config.m > 1
    keep = ~np.eye(config.n, dtype=bool) if off_diagonal else np.ones((config.n, config.m), dtype=bool)
    entries = []
    for _ in range(trials):
        X_R, mean_R = _masked(config.d, config.n, config.p_R, config.delta_R, config.M_R, rng)
        X_L, mean_L = _masked(config.d, config.m, config.p_L, config.delta_L, config.M_L, rng)
        centered = scale * (X_R.T @ X_L - mean_R.T @ mean_L)
        entries.append(centered[keep])
    pooled = np.stack(entries)
    report = ks_test(pooled.reshape(-1), "norm", name="wishart", alpha=alpha)
    details: Dict[str, Any] = {"psi": config.psi, "pooled": "off_diagonal" if off_diagonal else "all"}
    if trials > pooled.shape[1]:
        deviation = np.cov(pooled, rowvar=False) - np.eye(pooled.shape[1])
        details["covariance_deviation"] = float(np.abs(deviation).max())
    return report.model_copy(update={"details": details, "sizes": {**report.sizes, "trials": trials, "d": config.d}})


def wishart_trend(
    config: WishartConfig,
    dimensions: Sequence[int],
    trials: int,
    repeats: int,
    rng: np.random.Generator,
) -> TestReport:
    """Seed-averaged KS statistic of wishart_check for growing d; passes when it strictly decreases."""
    if len(dimensions) < 2 or list(dimensions) != sorted(set(dimensions)):
        raise ParameterError(f"Need at least two increasing dimensions, got {list(dimensions)}")
    averages = []
    for d in dimensions:
        sized = WishartConfig(**{**config.model_dump(), "d": int(d)})
        runs = [wishart_check(sized, trials, child_rng(rng, f"wishart/{d}/{r}")).statistic for r in range(repeats)]
        averages.append(float(np.mean(runs)))
    decreasing = all(left > right for left, right in zip(averages, averages[1:]))
    return TestReport(
        test="wishart_trend",
        statistic=averages[-1],
        passed=decreasing,
        sizes={"trials": trials, "repeats": repeats},
        details={"d": [int(d) for d in dimensions], "ks": averages},
    )


def identity_pipeline(instance: Instance, rng: np.random.Generator) -> Tuple[Instance, ReductionReport]:
    return instance, make_report("identity", instance.spec, instance.spec)


def _sample_pair(spec: ModelSpec, rng: np.random.Generator) -> Tuple[Instance, Instance]:
    if spec.family == Family.LWE:
        assert spec.q is not None
        signal = sample_signal(spec.n, spec.q, rng)
        return sample_lwe(spec, signal, rng), sample_lwe(spec, None, rng)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    return sample_planted(spec, signal, rng), sample_null(spec, rng)


def collision_input(instance: Instance, rng: np.random.Generator) -> Instance:
    if instance.spec.family == Family.GAUSS:
        instance, _ = discretize_instance(instance, rng)
    if instance.spec.family == Family.XOR:
        return xor_as_lwe(instance)
    return instance


def collision_view_spec(spec: ModelSpec) -> ModelSpec:
    if spec.family == Family.GAUSS:
        spec = spec.derive(family=Family.XOR, m_value=spec.m, delta_value=min(1.0, abs(spec.delta)))
    return lwe_view_spec(spec) if spec.family == Family.XOR else spec


def detection_transfer(
    pipeline: Pipeline,
    spec: ModelSpec,
    trials: int,
    rng: np.random.Generator,
    tolerance: float = 0.1,
    seed: Optional[int] = None,
    name: str = "detection_transfer",
) -> TestReport:
    """Empirical Type I + Type II error of the collision detector run after `pipeline`."""
    if trials < 1:
        raise ParameterError("Need at least one trial")
    false_alarms = misses = 0
    thresholds = []
    feasible = True
    for trial in range(trials):
        trial_rng = child_rng(rng, f"trial/{trial}")
        planted, null = _sample_pair(spec, trial_rng)
        for source, truth in ((planted, Verdict.PLANTED), (null, Verdict.NULL)):
            output, report = pipeline(source, trial_rng)
            plan = collision_plan(collision_view_spec(report.output_spec))
            thresholds.append(plan.T)
            feasible = feasible and plan.feasible
            verdict = collision_detect(collision_input(output, trial_rng), plan.T)
            if verdict != truth:
                if truth == Verdict.PLANTED:
                    misses += 1
                else:
                    false_alarms += 1
    error = false_alarms / trials + misses / trials
    logger.info(f"{name} over {trials} trials: type I {false_alarms}, type II {misses}")
    return TestReport(
        test=name,
        statistic=error,
        passed=error <= tolerance,
        sizes={"trials": trials, "false_alarms": false_alarms, "misses": misses},
        seed=seed,
        details={"threshold": float(np.median(thresholds)), "tolerance": tolerance, "feasible": feasible},
    )


def _law_test(name: str, aligned: np.ndarray, family: Family, delta: float) -> TestReport:
    if family == Family.XOR:
        return binomial_test(int(np.sum(aligned == 1)), aligned.shape[0], (1 + delta) / 2, name=f"{name}.law")
    return ks_test(aligned - delta, "norm", name=f"{name}.law")


def _signal_test(name: str, aligned: np.ndarray, delta: float) -> TestReport:
    estimate = float(aligned.mean())
    stderr = float(aligned.std(ddof=1) / math.sqrt(aligned.shape[0]))
    z = (estimate - delta) / stderr if stderr > 0 else (0.0 if estimate == delta else math.inf)
    p_value = float(2 * stats.norm.sf(abs(z)))
    return TestReport(
        test=f"{name}.signal",
        statistic=z,
        p_value=p_value,
        passed=_decide(p_value, None),
        sizes={"samples": int(aligned.shape[0])},
        details={"estimate": estimate, "stderr": stderr, "reported": delta},
    )


def _ledger_test(
    name: str,
    runs: Sequence[Tuple[Instance, Optional[ReductionReport]]],
    signal: Signal,
    expect: Optional[Dict[str, Any]] = None,
) -> TestReport:
    problems: List[str] = []
    for output, report in runs:
        if report is not None:
            if report.output_spec != output.spec:
                problems.append(f"{report.name}: reported output spec differs from the instance")
            if report.signal_transform.n_in != signal.n:
                problems.append(f"{report.name}: transform starts in dimension {report.signal_transform.n_in}")
        for field, value in (expect or {}).items():
            if getattr(output.spec, field) != value:
                problems.append(f"{field}={getattr(output.spec, field)} expected {value}")
    return TestReport(
        test=f"{name}.ledger",
        statistic=float(len(problems)),
        passed=not problems,
        sizes={"runs": len(runs)},
        details={"problems": problems[:10]},
    )


def reduction_bundle(
    name: str,
    runs: Sequence[Tuple[Instance, Optional[ReductionReport]]],
    signal: Signal,
    expect: Optional[Dict[str, Any]] = None,
) -> List[TestReport]:
    """Marginal law, lag-one independence, planted-direction mean and parameter ledger of pooled outputs."""
    family = runs[0][0].spec.family
    if family == Family.LWE:
        return _lwe_bundle(name, runs, signal, expect)
    aligned_parts, delta_parts = [], []
    for output, report in runs:
        transform = None if report is None else report.signal_transform
        aligned = _aligned(output, signal, transform)
        aligned_parts.append(aligned)
        delta_parts.append(np.full(aligned.shape[0], output.spec.delta))
    aligned = np.concatenate(aligned_parts).astype(np.float64)
    deltas = np.concatenate(delta_parts)
    delta = float(deltas.mean()) if deltas.size else 0.0
    if family == Family.GAUSS:
        law = ks_test(aligned - deltas, "norm", name=f"{name}.law")
    else:
        law = _law_test(name, aligned, family, delta)
    centered = aligned - deltas
    independence = correlation_test({"even": centered[0::2], "odd": centered[1::2]}, name=f"{name}.independence")
    return [law, independence, _signal_test(name, aligned, delta), _ledger_test(name, runs, signal, expect)]


def _lwe_bundle(
    name: str,
    runs: Sequence[Tuple[Instance, Optional[ReductionReport]]],
    signal: Signal,
    expect: Optional[Dict[str, Any]],
) -> List[TestReport]:
    family = NoiseFamily.from_spec(runs[0][0].spec)
    parts = []
    for output, report in runs:
        restricted = signal if report is None else report.signal_transform.apply(signal)
        parts.append(residuals(output, restricted))
    errors = np.concatenate(parts)
    law = chi_square_test(np.bincount(errors, minlength=family.q), family.pmf(), name=f"{name}.law")
    lifted = centered_lift(errors, family.q).astype(np.float64)
    independence = correlation_test({"even": lifted[0::2], "odd": lifted[1::2]}, name=f"{name}.independence")
    return [law, independence, _ledger_test(name, runs, signal, expect)]


def _planted(spec: ModelSpec, rng: np.random.Generator, signal: Optional[Signal] = None) -> Tuple[Instance, Signal]:
    signal = signal or sample_signal(spec.n, SIGN_ALPHABET, rng)
    return sample_planted(spec, signal, rng), signal


def _xor(k: int, n: int, m: int, delta: float, epsilon: Any = 0, **fields: Any) -> ModelSpec:
    return ModelSpec(family=Family.XOR, k=k, n=n, epsilon=epsilon, m_value=m, delta_value=delta, **fields)


def _gauss(k: int, n: int, m: int, delta: float, epsilon: Any = 0, **fields: Any) -> ModelSpec:
    return ModelSpec(family=Family.GAUSS, k=k, n=n, epsilon=epsilon, m_value=m, delta_value=delta, **fields)


SuiteRun = Callable[[np.random.Generator], List[TestReport]]


class Suite(BaseModel):  # type: ignore
    name: str
    covers: Tuple[str, ...] = Field(description="Operations whose outputs the suite tests")
    run: SuiteRun

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


SUITES: Dict[str, Suite] = {}


def register_suite(name: str, *covers: str) -> Callable[[SuiteRun], SuiteRun]:
    def decorator(func: SuiteRun) -> SuiteRun:
        assert name not in SUITES, f"Suite {name} registered twice"
        SUITES[name] = Suite(name=name, covers=covers or (name,), run=func)
        return func

    return decorator


@register_suite("gaussianize", "gaussianize_instance")
def _gaussianize_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 30, 20000, 0.3), rng)
    return reduction_bundle("gaussianize", [gaussianize_instance(instance, rng)], signal)


@register_suite("discretize", "discretize_instance")
def _discretize_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_gauss(3, 30, 20000, 0.5), rng)
    return reduction_bundle("discretize", [discretize_instance(instance, rng)], signal)


@register_suite("count_mode", "set_count_mode")
def _count_mode_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 30, 20000, 0.3), rng)
    output, report = set_count_mode(instance, CountMode.POISSON, rng)
    bundle = reduction_bundle("count_mode", [(output, report)], signal, {"count_mode": CountMode.POISSON})
    return bundle + [poisson_count_test(output.m, instance.m / 2, name="count_mode.count")]


@register_suite("index_order", "convert_index_order")
def _index_order_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 30, 20000, 0.3), rng)
    output, report = convert_index_order(instance, IndexSpace.TUPLE, rng)
    first = np.bincount(output.idx[:, 0], minlength=output.spec.n)
    uniform = chi_square_test(first, np.ones(output.spec.n), name="index_order.first_position")
    return reduction_bundle("index_order", [(output, report)], signal, {"index_space": IndexSpace.TUPLE}) + [uniform]


@register_suite("sampling", "convert_sampling")
def _sampling_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 20, 4000, 0.3), rng)
    distinct, to_wor = convert_sampling(instance, Sampling.WITHOUT_REPL, rng, limit=600)
    resampled, to_wr = convert_sampling(distinct, Sampling.WITH_REPL, rng, purpose=RECOVERY)
    return reduction_bundle(
        "to_without_replacement", [(distinct, to_wor)], signal, {"sampling": Sampling.WITHOUT_REPL}
    ) + reduction_bundle("to_with_replacement", [(resampled, to_wr)], signal, {"sampling": Sampling.WITH_REPL})


@register_suite("adjust_samples", "adjust_samples")
def _adjust_samples_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 30, 10000, 0.4), rng)
    output, report = adjust_samples(instance, 20000, rng)
    return reduction_bundle("adjust_samples", [(output, report)], signal, {"m": 20000})


@register_suite("adjust_density", "adjust_density")
def _adjust_density_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = ModelSpec(family=Family.XOR, k=2, n=100, epsilon=Fraction(1, 2))
    instance, signal = _planted(spec, rng)
    output, report = adjust_density(instance, Fraction(1), rng)
    return reduction_bundle("adjust_density", [(output, report)], signal, {"eta": Fraction(1, 2)})


@register_suite("restrict", "restrict_instance")
def _restrict_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(2, 30, 20000, 0.3), rng)
    output, report = restrict_instance(instance, 20)
    kept = binomial_test(output.m, instance.m, math.comb(20, 2) / math.comb(30, 2), name="restrict.kept")
    return reduction_bundle("restrict", [(output, report)], signal, {"n": 20}) + [kept]


@register_suite("split", "split_instance")
def _split_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_xor(3, 30, 6000, 0.3), rng)
    parts, report = split_instance(instance, 3, rng)
    ids = np.concatenate([part.ids for part in parts])
    reuse = int(ids.shape[0] - np.unique(ids).shape[0]) + abs(int(ids.shape[0]) - instance.m)
    structure = TestReport(test="split.partition", statistic=reuse, passed=reuse == 0)
    across = correlation_test(
        {str(i): _aligned(part, signal) for i, part in enumerate(parts)}, name="split.across_parts"
    )
    runs: List[Tuple[Instance, Optional[ReductionReport]]] = [(part, report) for part in parts]
    return reduction_bundle("split", runs, signal) + [structure, across]


@register_suite("clone", "clone_instance")
def _clone_suite(rng: np.random.Generator) -> List[TestReport]:
    instance, signal = _planted(_gauss(3, 30, 5000, 0.5), rng)
    copies, report = clone_instance(instance, 4, rng)
    noise = {str(i): _aligned(copy, signal) - copy.spec.delta for i, copy in enumerate(copies)}
    across = correlation_test(noise, name="clone.across_copies")
    runs: List[Tuple[Instance, Optional[ReductionReport]]] = [(copy, report) for copy in copies]
    return reduction_bundle("clone", runs, signal, {"delta": 0.25}) + [across]


@register_suite("decompose_full", "decompose_full")
def _decompose_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _gauss(3, 12, 20000, 0.3, Fraction(1, 3), index_space=IndexSpace.MULTISET)
    instance, signal = _planted(spec, rng)
    strata, report = decompose_full(instance, rng)
    reports: List[TestReport] = []
    for r, stratum in enumerate(strata):
        expected = float(spec.m * stratum_weight(spec.n, spec.k, spec.k - 2 * r))
        reports.append(poisson_count_test(stratum.m, expected, name=f"decompose_full.stratum_{r}"))
        reports += reduction_bundle(f"decompose_full.{r}", [(stratum, report if r == 0 else None)], signal)
    return reports


def _multiset_table(n: int, k: int) -> Tuple[Dict[Tuple[int, ...], int], np.ndarray]:
    terms = enumerate_index_space(IndexSpace.MULTISET, n, k)
    ranks = {tuple(row): position for position, row in enumerate(terms.tolist())}
    weights = np.array([float(multiset_weight(row, n, k)) for row in terms.tolist()])
    return ranks, weights


@register_suite("compose_full", "compose_full")
def _compose_suite(rng: np.random.Generator) -> List[TestReport]:
    n, k, total, epsilon = 12, 3, 20000, Fraction(1, 3)
    signal = sample_signal(n, SIGN_ALPHABET, rng)
    strata = []
    for r in range((k - 1) // 2 + 1):
        order = k - 2 * r
        count = round(total * stratum_weight(n, k, order))
        strata.append(sample_planted(_xor(order, n, count, 0.3, epsilon), signal, rng))
    output, report = compose_full(strata, epsilon, rng)
    ranks, weights = _multiset_table(n, k)
    counts = np.zeros(weights.shape[0])
    for row in output.idx.tolist():
        counts[ranks[tuple(row)]] += 1
    marginal = chi_square_test(counts, weights, name="compose_full.multiset_law")
    bundle = reduction_bundle("compose_full", [(output, report)], signal, {"index_space": IndexSpace.MULTISET})
    return bundle + [marginal]


@register_suite("reduce_order_factor", "reduce_order_factor")
def _reduce_order_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _xor(4, 6, 20000, 0.3, index_space=IndexSpace.MULTISET)
    instance, signal = _planted(spec, rng)
    output, report = reduce_order_factor(instance, 2, rng)
    return reduction_bundle("reduce_order_factor", [(output, report)], signal, {"k": 2, "n": 36})


def _reuse_test(name: str, outputs: Sequence[Instance]) -> TestReport:
    violations = 0
    for output in outputs:
        if output.parents is None:
            continue
        used = output.parents[output.parents >= 0]
        violations += int(used.shape[0] - np.unique(used).shape[0])
    return TestReport(test=f"{name}.sample_reuse", statistic=violations, passed=violations == 0)


def _pair_law(name: str, outputs: Sequence[Instance]) -> TestReport:
    n = outputs[0].spec.n
    terms = np.concatenate([output.idx for output in outputs])
    codes = terms[:, 0] * n + terms[:, 1]
    cells = enumerate_index_space(IndexSpace.SET, n, 2)
    counts = np.bincount(np.searchsorted(cells[:, 0] * n + cells[:, 1], codes), minlength=cells.shape[0])
    return chi_square_test(counts, np.ones(cells.shape[0]), name=f"{name}.index_law")


@register_suite("discr_eqcomb", "discr_eqcomb")
def _discr_eqcomb_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _xor(4, 30, 9000, 0.6)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [discr_eqcomb(sample_planted(spec, signal, rng), 2, rng, kappa=0.5) for _ in range(10)]
    outputs = [output for output, _ in runs]
    bundle = reduction_bundle("discr_eqcomb", runs, signal, {"epsilon": Fraction(0), "eta": Fraction(0)})
    return bundle + [_reuse_test("discr_eqcomb", outputs), _pair_law("discr_eqcomb", outputs)]


@register_suite("discr_eqcomb_two", "discr_eqcomb_two")
def _discr_eqcomb_two_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _xor(3, 30, 4000, 0.6)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [
        discr_eqcomb_two(sample_planted(spec, signal, rng), sample_planted(spec, signal, rng), 2, rng, kappa=0.5)
        for _ in range(10)
    ]
    return reduction_bundle("discr_eqcomb_two", runs, signal, {"k": 2})


@register_suite("gauss_eqcomb", "gauss_eqcomb")
def _gauss_eqcomb_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _gauss(4, 30, 30000, 1 / 30, 1)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [
        gauss_eqcomb(sample_planted(spec, signal, rng), 2, rng, kappa=0.5, check_regime=False) for _ in range(4)
    ]
    return reduction_bundle("gauss_eqcomb", runs, signal, {"k": 2, "epsilon": Fraction(1)})


@register_suite("gauss_eqcomb_two", "gauss_eqcomb_two")
def _gauss_eqcomb_two_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _gauss(4, 30, 15000, 1 / 30, 1)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [
        gauss_eqcomb_two(
            sample_planted(spec, signal, rng), sample_planted(spec, signal, rng), 2, rng, kappa=0.5, check_regime=False
        )
        for _ in range(4)
    ]
    return reduction_bundle("gauss_eqcomb_two", runs, signal, {"k": 2})


@register_suite("sparse_to_dense", "sparse_to_dense")
def _sparse_to_dense_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _xor(9, 20, 40000, 0.8, Fraction(1, 4))
    instance, signal = _planted(spec, rng)
    output, report = sparse_to_dense(instance, 2, Fraction(1), rng, kappa=0.5)
    return reduction_bundle("sparse_to_dense", [(output, report)], signal, {"k": 2, "epsilon": Fraction(1)})


@register_suite("reduce_k_discrete", "reduce_k_discrete")
def _reduce_k_discrete_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _xor(4, 30, 9000, 0.6)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [reduce_k_discrete(sample_planted(spec, signal, rng), 2, rng, kappa=0.5) for _ in range(5)]
    return reduction_bundle("reduce_k_discrete", runs, signal, {"k": 2})


@register_suite("reduce_k_gauss", "reduce_k_gauss")
def _reduce_k_gauss_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = _gauss(4, 30, 30000, 1 / 30, 1)
    signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
    runs = [
        reduce_k_gauss(sample_planted(spec, signal, rng), 2, rng, kappa=0.5, check_regime=False) for _ in range(4)
    ]
    return reduction_bundle("reduce_k_gauss", runs, signal, {"k": 2})


@register_suite("discr_eqcomb_lwe", "discr_eqcomb_lwe")
def _discr_eqcomb_lwe_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = ModelSpec(
        family=Family.LWE,
        k=4,
        n=30,
        epsilon=0,
        q=5,
        noise=NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=1.0),
        m_value=20000,
    )
    signal = sample_signal(spec.n, 5, rng)
    runs = [discr_eqcomb_lwe(sample_lwe(spec, signal, rng), 2, rng, kappa=0.5) for _ in range(5)]
    return reduction_bundle("discr_eqcomb_lwe", runs, signal, {"k": 2})


@register_suite("noise_laws", "difference", "aggregated", "aggregate")
def _noise_laws_suite(rng: np.random.Generator) -> List[TestReport]:
    laws = {
        "uniform": NoiseParams(kind=NoiseKind.UNIFORM, delta=0.5),
        "discrete_gauss": NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=1.5),
        "bounded": NoiseParams(kind=NoiseKind.BOUNDED, pmf={-1: 0.25, 0: 0.5, 1: 0.25}),
    }
    reports = []
    for label, params in laws.items():
        family = NoiseFamily(params=params, q=7)
        difference = (family.sample(20000, rng) - family.sample(20000, rng)) % family.q
        reports.append(
            chi_square_test(
                np.bincount(difference, minlength=family.q), family.difference().pmf(), name=f"noise_laws.{label}"
            )
        )
    return reports + [parity_average_check(NoiseFamily(params=laws["discrete_gauss"], q=7), 20000, rng)]


def parity_average_check(family: NoiseFamily, pairs: int, rng: np.random.Generator) -> TestReport:
    """Aggregated pairs of observations of planted values over all of Z_q follow the halved-width law."""
    q, params = family.q, family.params
    assert params.s is not None
    planted = rng.integers(0, q, size=pairs)
    observed = (planted[:, None] + family.sample(2 * pairs, rng).reshape(pairs, 2)) % q
    even = centered_lift(observed[:, 0] - observed[:, 1], q) % 2 == 0
    errors = [
        (aggregate(family, row, rng) - value) % q for row, value in zip(observed[even], planted[even].tolist())
    ]
    halved = NoiseFamily(params=NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=params.s / math.sqrt(2)), q=q)
    return chi_square_test(np.bincount(errors, minlength=q), halved.pmf(), name="noise_laws.parity_average")


@register_suite("collision_detection", "collision_detect")
def _collision_suite(rng: np.random.Generator) -> List[TestReport]:
    spec = ModelSpec(
        family=Family.LWE,
        k=3,
        n=10,
        epsilon=0,
        q=5,
        noise=NoiseParams(kind=NoiseKind.UNIFORM, delta=0.5),
    )
    spec = spec.derive(m_value=collision_sample_size(spec))
    plan = collision_plan(spec)
    report = detection_transfer(identity_pipeline, spec, 100, rng, name="collision_detection.error")
    feasible = TestReport(
        test="collision_detection.feasible",
        statistic=plan.lhs / plan.bound,
        passed=plan.feasible,
        sizes={"m": spec.m, "classes": plan.classes},
    )
    return [report, feasible]


def pair_combination_pipeline(instance: Instance, rng: np.random.Generator) -> Tuple[Instance, ReductionReport]:
    return discr_eqcomb(instance, 2, rng, kappa=0.1)


def detection_spec(n: int) -> ModelSpec:
    """4-XOR at bias 0.8 with m = 8 n^2 ln n, at the largest density that keeps combination sparse."""
    return _xor(4, n, round(8 * n**2 * math.log(n)), 0.8, Fraction(1, 4))


@register_suite("detection_transfer", "detection_transfer")
def _detection_transfer_suite(rng: np.random.Generator) -> List[TestReport]:
    return [
        detection_transfer(identity_pipeline, detection_spec(20), 100, rng, name="detection_transfer.source_n20"),
        detection_transfer(identity_pipeline, detection_spec(40), 100, rng, name="detection_transfer.source"),
        detection_transfer(pair_combination_pipeline, detection_spec(40), 100, rng, name="detection_transfer.combined"),
    ]


@register_suite("wishart", "wishart_check", "wishart_trend")
def _wishart_suite(rng: np.random.Generator) -> List[TestReport]:
    dense = WishartConfig(d=10_000, n=4, m=4)
    sparse = WishartConfig(d=200, n=4, m=4, p_R=0.1, p_L=0.1)
    return [
        wishart_check(dense, 200, rng),
        wishart_trend(dense, (200, 2000, 10_000), 200, 20, rng).model_copy(update={"test": "wishart_trend.dense"}),
        wishart_trend(sparse, (200, 5000), 100, 20, rng).model_copy(update={"test": "wishart_trend.sparse"}),
    ]


def run_suite(
    name: str,
    seed: int,
    repetitions: Optional[int] = None,
    workers: int = 1,
) -> List[TestReport]:
    """Run a suite `repetitions` times; a test passes when the majority of repetitions pass."""
    if name not in SUITES:
        raise ParameterError(f"Unknown suite {name!r}, choose from {sorted(SUITES)}")
    repetitions = repetitions or settings.VERIFY_REPETITIONS
    suite = SUITES[name]

    def _one(repetition: int) -> List[TestReport]:
        return suite.run(make_rng(seed, f"{name}/{repetition}"))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        outcomes = list(executor.map(_one, range(repetitions)))

    merged: List[TestReport] = []
    for position, first in enumerate(outcomes[0]):
        runs = [outcome[position] for outcome in outcomes]
        passes = sum(run.passed for run in runs)
        p_values = [run.p_value for run in runs if run.p_value is not None]
        merged.append(
            TestReport(
                test=f"{name}.{first.test}" if not first.test.startswith(name) else first.test,
                statistic=float(np.median([run.statistic for run in runs])),
                p_value=float(np.median(p_values)) if p_values else None,
                passed=2 * passes > repetitions,
                sizes={**first.sizes, "repetitions": repetitions, "passes": passes},
                seed=seed,
            )
        )
    logger.info(f"Suite {name}: {sum(r.passed for r in merged)}/{len(merged)} tests passed")
    return merged

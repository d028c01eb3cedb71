import logging
from typing import Any, Callable, Dict, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from planted_reductions.eqcomb import (
    discr_eqcomb,
    gauss_eqcomb,
    reduce_k_discrete,
    reduce_k_gauss,
    sparse_to_dense,
)
from planted_reductions.errors import ParameterError
from planted_reductions.lwe import discr_eqcomb_lwe
from planted_reductions.models import CountMode, Family, IndexSpace, Instance, Rational, Sampling
from planted_reductions.rng import child_rng
from planted_reductions.transforms import (
    DETECTION,
    RECOVERY,
    ReductionReport,
    adjust_density,
    adjust_samples,
    compose_reports,
    convert_index_order,
    convert_sampling,
    discretize_instance,
    gaussianize_instance,
    reduce_order_factor,
    restrict_instance,
    set_count_mode,
)

logger = logging.getLogger(__name__)

StageResult = Tuple[Instance, ReductionReport]


class NoParams(BaseModel):  # type: ignore
    model_config = ConfigDict(extra="forbid")


class GaussianizeStage(NoParams):
    C: Optional[float] = Field(default=None, gt=0, le=1)


class CountModeStage(NoParams):
    target: CountMode
    m: Optional[int] = Field(default=None, ge=0)


class IndexOrderStage(NoParams):
    direction: IndexSpace


class SamplingStage(NoParams):
    target: Sampling
    purpose: str = Field(default=RECOVERY, pattern=f"^({RECOVERY}|{DETECTION})$")
    limit: Optional[int] = Field(default=None, ge=0)


class AdjustSamplesStage(NoParams):
    m: int = Field(ge=0)


class AdjustDensityStage(NoParams):
    epsilon: Rational

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")


class RestrictStage(NoParams):
    n: int = Field(ge=1)


class FactorStage(NoParams):
    a: int = Field(ge=1)


class CombineStage(NoParams):
    k_prime: int = Field(ge=1)
    kappa: Optional[float] = Field(default=None, gt=0, lt=1)


class GaussCombineStage(CombineStage):
    check_regime: bool = True


class DensifyStage(CombineStage):
    epsilon_prime: Rational
    a: Optional[int] = Field(default=None, ge=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")


class OpSpec(BaseModel):  # type: ignore
    name: str
    params: Type[NoParams]
    run: Callable[[Instance, Any, np.random.Generator], StageResult]
    family: Optional[Family] = Field(default=None, description="Input family, converted between XOR and Gaussian")
    sampling: Optional[Sampling] = Field(default=None, description="Input sampling, converted when it differs")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


OPS: Dict[str, OpSpec] = {}


def _register(name: str, params: Type[NoParams], **requirements: Any) -> Callable[[Callable[..., StageResult]], Any]:
    def decorator(func: Callable[..., StageResult]) -> Callable[..., StageResult]:
        OPS[name] = OpSpec(name=name, params=params, run=func, **requirements)
        return func

    return decorator


@_register("gaussianize", GaussianizeStage)
def _gaussianize(instance: Instance, p: GaussianizeStage, rng: np.random.Generator) -> StageResult:
    return gaussianize_instance(instance, rng, C=p.C)


@_register("discretize", NoParams)
def _discretize(instance: Instance, p: NoParams, rng: np.random.Generator) -> StageResult:
    return discretize_instance(instance, rng)


@_register("count_mode", CountModeStage)
def _count_mode(instance: Instance, p: CountModeStage, rng: np.random.Generator) -> StageResult:
    return set_count_mode(instance, p.target, rng, m=p.m)


@_register("index_order", IndexOrderStage, sampling=Sampling.WITH_REPL)
def _index_order(instance: Instance, p: IndexOrderStage, rng: np.random.Generator) -> StageResult:
    return convert_index_order(instance, p.direction, rng)


@_register("sampling", SamplingStage)
def _sampling(instance: Instance, p: SamplingStage, rng: np.random.Generator) -> StageResult:
    return convert_sampling(instance, p.target, rng, purpose=p.purpose, limit=p.limit)


@_register("adjust_samples", AdjustSamplesStage)
def _adjust_samples(instance: Instance, p: AdjustSamplesStage, rng: np.random.Generator) -> StageResult:
    return adjust_samples(instance, p.m, rng)


@_register("adjust_density", AdjustDensityStage)
def _adjust_density(instance: Instance, p: AdjustDensityStage, rng: np.random.Generator) -> StageResult:
    return adjust_density(instance, p.epsilon, rng)


@_register("restrict", RestrictStage)
def _restrict(instance: Instance, p: RestrictStage, rng: np.random.Generator) -> StageResult:
    return restrict_instance(instance, p.n)


@_register("reduce_order_factor", FactorStage)
def _reduce_order(instance: Instance, p: FactorStage, rng: np.random.Generator) -> StageResult:
    return reduce_order_factor(instance, p.a, rng)


@_register("discr_eqcomb", CombineStage, family=Family.XOR)
def _discr_eqcomb(instance: Instance, p: CombineStage, rng: np.random.Generator) -> StageResult:
    return discr_eqcomb(instance, p.k_prime, rng, kappa=p.kappa)


@_register("gauss_eqcomb", GaussCombineStage, family=Family.GAUSS, sampling=Sampling.WITH_REPL)
def _gauss_eqcomb(instance: Instance, p: GaussCombineStage, rng: np.random.Generator) -> StageResult:
    return gauss_eqcomb(instance, p.k_prime, rng, kappa=p.kappa, check_regime=p.check_regime)


@_register("sparse_to_dense", DensifyStage, family=Family.XOR, sampling=Sampling.WITH_REPL)
def _sparse_to_dense(instance: Instance, p: DensifyStage, rng: np.random.Generator) -> StageResult:
    return sparse_to_dense(instance, p.k_prime, p.epsilon_prime, rng, a=p.a, kappa=p.kappa)


@_register("reduce_k_discrete", CombineStage, family=Family.XOR, sampling=Sampling.WITH_REPL)
def _reduce_k_discrete(instance: Instance, p: CombineStage, rng: np.random.Generator) -> StageResult:
    return reduce_k_discrete(instance, p.k_prime, rng, kappa=p.kappa)


@_register("reduce_k_gauss", GaussCombineStage, family=Family.GAUSS, sampling=Sampling.WITH_REPL)
def _reduce_k_gauss(instance: Instance, p: GaussCombineStage, rng: np.random.Generator) -> StageResult:
    return reduce_k_gauss(instance, p.k_prime, rng, kappa=p.kappa, check_regime=p.check_regime)


@_register("discr_eqcomb_lwe", CombineStage)
def _discr_eqcomb_lwe(instance: Instance, p: CombineStage, rng: np.random.Generator) -> StageResult:
    return discr_eqcomb_lwe(instance, p.k_prime, rng, kappa=p.kappa)


class StageSpec(BaseModel):  # type: ignore
    op: str = Field(description="Registered operation name")
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "StageSpec":
        if self.op not in OPS:
            raise ParameterError(f"Unknown operation {self.op!r}, choose from {sorted(OPS)}")
        OPS[self.op].params(**self.params)
        return self

    def parsed(self) -> NoParams:
        return OPS[self.op].params(**self.params)


class PipelineSpec(BaseModel):  # type: ignore
    stages: List[StageSpec] = Field(min_length=1)
    seed: Optional[int] = Field(default=None, ge=0)
    input: Optional[str] = None
    output: Optional[str] = None

    def run(self, instance: Instance, rng: np.random.Generator) -> StageResult:
        return run_pipeline(self, instance, rng)


def _auto_inserted(report: ReductionReport, reason: str) -> ReductionReport:
    return report.model_copy(
        update={"constants": {**report.constants, "auto_inserted": True}, "notes": [*report.notes, reason]}
    )


def _prepare(instance: Instance, op: OpSpec, rng: np.random.Generator) -> Tuple[Instance, List[ReductionReport]]:
    """Insert family and sampling conversions an operation needs."""
    inserted: List[ReductionReport] = []
    spec = instance.spec
    if op.family is not None and spec.family != op.family:
        if {spec.family, op.family} != {Family.XOR, Family.GAUSS}:
            raise ParameterError(f"{op.name} needs a {op.family.value} instance, got {spec.family.value}")
        convert = gaussianize_instance if op.family == Family.GAUSS else discretize_instance
        instance, report = convert(instance, rng)
        reason = f"auto_inserted: {report.name} before {op.name}"
        logger.info(reason)
        inserted.append(_auto_inserted(report, reason))
    if op.sampling is not None and instance.spec.sampling != op.sampling:
        purpose = DETECTION if instance.spec.epsilon == 1 else RECOVERY
        limit = instance.m if op.sampling == Sampling.WITHOUT_REPL else None
        instance, report = convert_sampling(instance, op.sampling, rng, purpose=purpose, limit=limit)
        reason = f"auto_inserted: {report.name} before {op.name}"
        logger.info(reason)
        inserted.append(_auto_inserted(report, reason))
    return instance, inserted


def run_pipeline(pipeline: PipelineSpec, instance: Instance, rng: np.random.Generator) -> StageResult:
    reports: List[ReductionReport] = []
    work = instance
    for position, stage in enumerate(pipeline.stages):
        op = OPS[stage.op]
        stage_rng = child_rng(rng, f"stage/{position}/{stage.op}")
        work, inserted = _prepare(work, op, stage_rng)
        reports += inserted
        work, report = op.run(work, stage.parsed(), stage_rng)
        logger.info(f"Stage {position} {stage.op}: {report.input_spec.m} -> {work.m} samples")
        reports.append(report)
    return work, compose_reports("pipeline", reports, input_spec=instance.spec)


def ledger_problems(report: ReductionReport) -> List[str]:
    """Stage-by-stage recomputation of the composed ledger; empty when consistent."""
    problems: List[str] = []
    stages = report.stages
    for left, right in zip(stages, stages[1:]):
        if left.output_spec != right.input_spec:
            problems.append(f"{left.name} -> {right.name}: output spec does not feed the next stage")
        if left.signal_transform.n_out != right.signal_transform.n_in:
            problems.append(f"{left.name} -> {right.name}: transform dimensions do not chain")
    if stages:
        last = stages[-1].output_spec
        for field in ("epsilon", "eta", "n", "k"):
            if getattr(last, field) != getattr(report.output_spec, field):
                composed, staged = getattr(report.output_spec, field), getattr(last, field)
                problems.append(f"composed {field}={composed} but last stage has {staged}")
        if stages[0].input_spec != report.input_spec:
            problems.append("composed input spec differs from the first stage")
    return problems

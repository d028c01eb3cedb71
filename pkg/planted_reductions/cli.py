import csv
import json
import logging
import sys
from fractions import Fraction
from logging.config import dictConfig
from typing import Any, Dict, List, Optional, Sequence

import fire  # type: ignore
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from planted_reductions.eqcomb import plan_sparse_to_dense
from planted_reductions.errors import ParameterError, PlantedError, VerificationError
from planted_reductions.io import read_instance, read_json, write_instance, write_model, write_signal
from planted_reductions.lwe import collision_detect, collision_plan, collision_statistics, sample_lwe
from planted_reductions.models import (
    SIGN_ALPHABET,
    Family,
    ModelSpec,
    NoiseParams,
    format_rational,
    parse_rational,
    sample_null,
    sample_planted,
    sample_signal,
)
from planted_reductions.pipeline import PipelineSpec
from planted_reductions.rng import make_rng
from planted_reductions.settings import settings
from planted_reductions.verify import (
    SUITES,
    TestReport,
    WishartConfig,
    collision_input,
    collision_view_spec,
    run_suite,
    wishart_check,
    wishart_trend,
)

logger = logging.getLogger(__name__)

FORMATS = ("table", "json", "csv")


def configure_logging(level: str = "INFO") -> None:
    dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {"default": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"}},
            "handlers": {
                "default": {
                    "class": "logging.StreamHandler",
                    "formatter": "default",
                    "stream": "ext://sys.stderr",
                }
            },
            "root": {"handlers": ["default"], "level": logging.getLevelName(level.upper())},
        }
    )


def _cell(value: Any) -> str:
    if isinstance(value, Fraction):
        return format_rational(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return ""
    return str(value)


def _emit(rows: List[Dict[str, Any]], title: str, output_format: str) -> None:
    if output_format not in FORMATS:
        raise ParameterError(f"Unknown format {output_format!r}, choose from {FORMATS}")
    if output_format == "json":
        sys.stdout.write(json.dumps(rows, indent=2, sort_keys=True, default=_cell) + "\n")
        return
    columns: List[str] = []
    for row in rows:
        columns += [key for key in row if key not in columns]
    if output_format == "csv":
        writer = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(value) for key, value in row.items()})
        return

    table = Table(title=title)
    for column in columns:
        table.add_column(column, style="cyan" if column == columns[0] else None)
    for row in rows:
        table.add_row(*[_cell(row.get(column)) for column in columns])
    Console().print(table)


def _seed(seed: Optional[int]) -> int:
    if seed is None:
        seed = settings.SEED
    if seed is None:
        logger.warning("No --seed given, using 0")
        return 0
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ParameterError(f"Seed must be a non-negative integer, got {seed!r}")
    return seed


def _report_row(report: TestReport) -> Dict[str, Any]:
    return {
        "test": report.test,
        "statistic": report.statistic,
        "p_value": report.p_value,
        "passed": report.passed,
        "seed": report.seed,
    }


def _source(kwargs: Dict[str, Any], fallback: Optional[str] = None) -> str:
    source = kwargs.pop("in", None) or kwargs.pop("input", None) or fallback
    if kwargs:
        raise ParameterError(f"Unknown options: {', '.join(sorted(kwargs))}")
    if not source:
        raise ParameterError("Missing --in")
    return str(source)


class CLI:
    def sample(
        self,
        family: str = "xor",
        k: int = 3,
        n: int = 100,
        epsilon: Any = 0,
        eta: Any = 0,
        seed: Optional[int] = None,
        out: str = "instance.jsonl",
        signal_out: Optional[str] = None,
        null: bool = False,
        count_mode: str = "fixed",
        index_space: str = "set",
        sampling: str = "with_repl",
        q: Optional[int] = None,
        noise: str = "uniform",
        noise_delta: Optional[float] = None,
        s: Optional[float] = None,
        pmf: Optional[Dict[int, float]] = None,
        m: Optional[int] = None,
        delta: Optional[float] = None,
    ) -> None:
        """Draw a planted (or null) instance and write it with its signal."""
        noise_params = None
        if family == Family.LWE.value:
            noise_params = NoiseParams(kind=noise, delta=noise_delta, s=s, pmf=pmf)
        spec = ModelSpec(
            family=family,
            k=k,
            n=n,
            epsilon=parse_rational(epsilon),
            eta=parse_rational(eta),
            count_mode=count_mode,
            index_space=index_space,
            sampling=sampling,
            q=q,
            noise=noise_params,
            m_value=m,
            delta_value=delta,
        )
        seed = _seed(seed)
        rng = make_rng(seed, "sample")
        if spec.family == Family.LWE:
            assert spec.q is not None
            signal = sample_signal(spec.n, spec.q, rng)
            instance = sample_lwe(spec, None if null else signal, rng)
        else:
            signal = sample_signal(spec.n, SIGN_ALPHABET, rng)
            instance = sample_null(spec, rng) if null else sample_planted(spec, signal, rng)
        write_instance(instance, out)
        signal_path = signal_out or f"{out}.signal.json"
        write_signal(signal, signal_path)
        logger.info(f"Wrote {instance.m} samples to {out} and the signal to {signal_path}")
        row = {
            "family": spec.family.value,
            "k": spec.k,
            "n": spec.n,
            "m": instance.m,
            "epsilon": spec.epsilon,
            "eta": spec.eta,
            "delta": spec.delta,
            "planted": not null,
            "out": out,
        }
        _emit([row], "Sampled instance", "table")

    def reduce(
        self,
        pipeline: str,
        out: Optional[str] = None,
        report: Optional[str] = None,
        seed: Optional[int] = None,
        format: str = "table",
        **kwargs: Any,
    ) -> None:
        """Run a pipeline file over an instance file; writes the output and its composed report."""
        spec = PipelineSpec.model_validate(read_json(pipeline))
        source = _source(kwargs, spec.input)
        out = out or spec.output
        if not out:
            raise ParameterError("Missing --out")
        seed = _seed(seed if seed is not None else spec.seed)
        instance = read_instance(source)
        output, composed = spec.run(instance, make_rng(seed, "reduce"))
        write_instance(output, out)
        report_path = report or f"{out}.report.json"
        write_model(composed, report_path)
        logger.info(f"Wrote {output.m} samples to {out} and the report to {report_path}")
        rows = [
            {
                "stage": stage.name,
                "k": stage.output_spec.k,
                "n": stage.output_spec.n,
                "m": stage.output_spec.m,
                "epsilon": stage.output_spec.epsilon,
                "eta": stage.output_spec.eta,
                "auto_inserted": bool(stage.constants.get("auto_inserted", False)),
            }
            for stage in composed.stages
        ]
        _emit(rows, "Reduction stages", format)

    def plan(self, epsilon: Any, epsilon_prime: Any, k_prime: int, eta: Any = 0, out: Optional[str] = None) -> None:
        """Print the sparse-to-dense plan as JSON."""
        result = plan_sparse_to_dense(
            parse_rational(epsilon), parse_rational(epsilon_prime), parse_rational(eta), k_prime
        )
        sys.stdout.write(write_model(result, out) + "\n")

    def detect(
        self, T: Optional[float] = None, seed: Optional[int] = None, format: str = "table", **kwargs: Any
    ) -> None:
        """Collision detection; the threshold comes from the instance header unless --T is given."""
        instance = read_instance(_source(kwargs))
        plan = collision_plan(collision_view_spec(instance.spec))
        threshold = plan.T if T is None else float(T)
        lwe_instance = collision_input(instance, make_rng(_seed(seed), "detect"))
        stats = collision_statistics(lwe_instance)
        verdict = collision_detect(lwe_instance, threshold)
        row = {
            "verdict": verdict.value,
            "pairs": stats.pairs,
            "agreements": stats.agreements,
            "ratio": stats.ratio,
            "T": threshold,
            "expected_pairs": plan.expected_pairs,
        }
        _emit([row], "Collision detection", format)

    def suites(self) -> None:
        rows = [{"suite": name, "covers": ", ".join(SUITES[name].covers)} for name in sorted(SUITES)]
        _emit(rows, "Verification suites", "table")

    def verify(
        self,
        suite: Any = "all",
        seed: Optional[int] = None,
        repetitions: Optional[int] = None,
        workers: int = 1,
        format: str = "table",
    ) -> None:
        if seed is None:
            seed = settings.SEED
        if seed is None:
            raise ParameterError("verify needs an explicit --seed")
        if isinstance(suite, (list, tuple)):
            names = [str(name) for name in suite]
        elif suite == "all":
            names = sorted(SUITES)
        else:
            names = [name.strip() for name in str(suite).split(",")]
        reports: List[TestReport] = []
        for name in names:
            reports += run_suite(name, _seed(seed), repetitions=repetitions, workers=workers)
        _emit([_report_row(report) for report in reports], "Verification", format)
        failed = [report.test for report in reports if not report.passed]
        if failed:
            raise VerificationError(f"{len(failed)} of {len(reports)} tests failed: {', '.join(failed)}")

    def wishart(
        self,
        d: Any,
        n: int = 1,
        m: int = 1,
        p_r: float = 1.0,
        p_l: float = 1.0,
        delta_r: float = 0.0,
        delta_l: float = 0.0,
        trials: int = 200,
        repeats: int = 20,
        seed: Optional[int] = None,
        format: str = "table",
    ) -> None:
        """Compare a sparse Wishart-type product against the Gaussian matrix with the same moments.

        A list of dimensions, e.g. --d [200,2000,10000], reports the seed-averaged KS trend instead.
        """
        dimensions = [int(value) for value in d] if isinstance(d, (list, tuple)) else [int(d)]
        config = WishartConfig(d=dimensions[0], n=n, m=m, p_R=p_r, p_L=p_l, delta_R=delta_r, delta_L=delta_l)
        seed = _seed(seed)
        rng = make_rng(seed, "wishart")
        if len(dimensions) > 1:
            result = wishart_trend(config, dimensions, trials, repeats, rng)
            rows = [{"d": size, "ks": ks} for size, ks in zip(result.details["d"], result.details["ks"])]
            _emit(rows + [_report_row(result.model_copy(update={"seed": seed}))], "Wishart trend", format)
            return
        result = wishart_check(config, trials, rng)
        _emit([{**_report_row(result.model_copy(update={"seed": seed})), "psi": config.psi}], "Wishart", format)


def run_command(argv: Sequence[str]) -> int:
    configure_logging(settings.LOG_LEVEL)
    console = Console(stderr=True)
    try:
        fire.Fire(CLI, command=list(argv), name="planted_reductions")
    except PlantedError as e:
        console.print(f"{type(e).__name__}: {e}", style="red", markup=False)
        return e.exit_code
    except ValidationError as e:
        console.print(f"Invalid parameters: {e}", style="red", markup=False)
        return ParameterError.exit_code
    except fire.core.FireExit as e:
        return int(e.code or 0)
    return 0

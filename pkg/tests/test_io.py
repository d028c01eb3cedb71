import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from planted_reductions.errors import ParameterError
from planted_reductions.io import (
    SCHEMA,
    read_instance,
    read_json,
    read_signal,
    write_instance,
    write_model,
    write_signal,
)
from planted_reductions.lwe import sample_lwe
from planted_reductions.models import (
    SIGN_ALPHABET,
    Family,
    ModelSpec,
    NoiseKind,
    NoiseParams,
    sample_planted,
    sample_signal,
)
from planted_reductions.transforms import adjust_density


def test_io_instance_file_is_one_based(tmp_path: Path, rng: np.random.Generator) -> None:
    spec = ModelSpec(family=Family.XOR, k=3, n=20, epsilon=0, m_value=50, delta_value=0.5)
    instance = sample_planted(spec, sample_signal(20, SIGN_ALPHABET, rng), rng)
    path = tmp_path / "instance.jsonl"
    write_instance(instance, path)

    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    first = json.loads(lines[1])
    assert len(lines) == 51
    assert header["schema"] == SCHEMA
    assert header["family"] == "xor"
    assert header["epsilon"] == "0/1"
    assert header["m"] == 50
    assert first["idx"] == (instance.idx[0] + 1).tolist()
    assert first["val"] == int(instance.vals[0])
    assert "id" not in first

    loaded = read_instance(path)
    assert loaded.spec == spec
    assert np.array_equal(loaded.idx, instance.idx)
    assert np.array_equal(loaded.vals, instance.vals)


def test_io_profile_header_has_no_overrides(tmp_path: Path, rng: np.random.Generator) -> None:
    spec = ModelSpec(family=Family.GAUSS, k=2, n=10, epsilon=Fraction(1, 2), eta=Fraction(1, 3))
    instance = sample_planted(spec, sample_signal(10, SIGN_ALPHABET, rng), rng)
    path = tmp_path / "gauss.jsonl"
    write_instance(instance, path)
    header = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert "m" not in header and "delta" not in header
    assert header["eta"] == "1/3"
    loaded = read_instance(path)
    assert loaded.spec.eta == Fraction(1, 3)
    assert np.allclose(loaded.vals, instance.vals)


def test_io_lwe_coefficients(tmp_path: Path, rng: np.random.Generator) -> None:
    spec = ModelSpec(
        family=Family.LWE,
        k=2,
        n=8,
        epsilon=0,
        q=5,
        noise=NoiseParams(kind=NoiseKind.DISCRETE_GAUSS, s=1.0),
        m_value=30,
    )
    instance = sample_lwe(spec, sample_signal(8, 5, rng), rng)
    path = tmp_path / "lwe.jsonl"
    write_instance(instance, path)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[1])
    assert first["coef"] == [[p + 1, c] for p, c in zip(instance.idx[0].tolist(), instance.coef[0].tolist())]
    loaded = read_instance(path)
    assert loaded.spec.noise == spec.noise
    assert np.array_equal(loaded.coef, instance.coef)


def test_io_signal(tmp_path: Path, rng: np.random.Generator) -> None:
    signal = sample_signal(12, 7, rng)
    write_signal(signal, tmp_path / "signal.json")
    loaded = read_signal(tmp_path / "signal.json")
    assert loaded.q == 7
    assert np.array_equal(loaded.x, signal.x)


def test_io_rejects_bad_files(tmp_path: Path) -> None:
    with pytest.raises(ParameterError):
        read_instance(tmp_path / "missing.jsonl")
    wrong = tmp_path / "wrong.jsonl"
    wrong.write_text(json.dumps({"schema": "other"}) + "\n", encoding="utf-8")
    with pytest.raises(ParameterError):
        read_instance(wrong)
    broken = tmp_path / "broken.jsonl"
    header = {"schema": SCHEMA, "family": "xor", "k": 2, "n": 5, "epsilon": "0/1", "eta": "0/1", "m": 1}
    broken.write_text(json.dumps(header) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ParameterError):
        read_instance(broken)
    out_of_range = tmp_path / "range.jsonl"
    out_of_range.write_text(json.dumps(header) + "\n" + json.dumps({"idx": [1, 6], "val": 1}) + "\n", encoding="utf-8")
    with pytest.raises(ParameterError):
        read_instance(out_of_range)


def test_io_write_model_serializes_rationals(tmp_path: Path, rng: np.random.Generator) -> None:
    spec = ModelSpec(family=Family.XOR, k=2, n=100, epsilon=1, delta_value=0.05)
    instance = sample_planted(spec, sample_signal(100, SIGN_ALPHABET, rng), rng)
    _, report = adjust_density(instance, Fraction(1, 2), rng)
    text = write_model(report, tmp_path / "report.json")
    payload = read_json(tmp_path / "report.json")
    assert text == json.dumps(payload, indent=2, sort_keys=True)
    assert payload["output_spec"]["epsilon"] == "1/2"
    assert payload["output_spec"]["eta"] == "1/2"

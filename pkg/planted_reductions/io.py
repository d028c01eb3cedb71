import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from planted_reductions.errors import ParameterError
from planted_reductions.models import Family, Instance, ModelSpec, Signal

logger = logging.getLogger(__name__)

SCHEMA = "pti-v1"
HEADER_FIELDS = ("family", "k", "n", "epsilon", "eta", "count_mode", "index_space", "sampling")

PathLike = Union[str, Path]


def _atomic_write(path: Path, lines: Iterator[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(temp_path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
        temp_path.replace(path)
    except Exception as e:
        if temp_path.exists():
            temp_path.unlink()
        logger.error(f"Failed to write {path}: {e}")
        raise


def _dumps(payload: Any) -> str:
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def spec_header(spec: ModelSpec) -> Dict[str, Any]:
    data = spec.model_dump(mode="json", exclude_none=True)
    header: Dict[str, Any] = {"schema": SCHEMA}
    header.update({name: data[name] for name in HEADER_FIELDS})
    if spec.q is not None:
        header["q"] = spec.q
    if "noise" in data:
        header["noise"] = data["noise"]
    if spec.m_value is not None:
        header["m"] = spec.m_value
    if spec.delta_value is not None:
        header["delta"] = spec.delta_value
    return header


def spec_from_header(header: Dict[str, Any]) -> ModelSpec:
    if header.get("schema") != SCHEMA:
        raise ParameterError(f"Unknown instance schema {header.get('schema')!r}")
    fields = {name: header[name] for name in HEADER_FIELDS if name in header}
    for name in ("q", "noise"):
        if name in header:
            fields[name] = header[name]
    if "m" in header:
        fields["m_value"] = header["m"]
    if "delta" in header:
        fields["delta_value"] = header["delta"]
    try:
        return ModelSpec(**fields)
    except ValidationError as e:
        raise ParameterError(f"Invalid instance header: {e}") from e


def _records(instance: Instance) -> Iterator[str]:
    default_ids = np.array_equal(instance.ids, np.arange(instance.m))
    gauss = instance.spec.family == Family.GAUSS
    idx = (instance.idx + 1).tolist()
    vals = instance.vals.tolist()
    coef = None if instance.coef is None else instance.coef.tolist()
    parents = None if instance.parents is None else instance.parents.tolist()
    for row in range(instance.m):
        record: Dict[str, Any] = {"idx": idx[row], "val": float(vals[row]) if gauss else int(vals[row])}
        if coef is not None:
            record["coef"] = [[pos, value] for pos, value in zip(idx[row], coef[row])]
        if not default_ids:
            record["id"] = int(instance.ids[row])
        if parents is not None:
            record["parents"] = parents[row]
        yield _dumps(record)


def write_instance(instance: Instance, path: PathLike) -> None:
    header = _dumps(spec_header(instance.spec))
    _atomic_write(Path(path), iter([header, *_records(instance)]))
    logger.info(f"Wrote {instance.m} samples to {path}")


def _read_lines(path: Path) -> List[Dict[str, Any]]:
    if not path.exists():
        raise ParameterError(f"File {path} does not exist")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                logger.error(f"Failed to parse {path}:{number}: {e}")
                raise ParameterError(f"Malformed JSON on line {number} of {path}") from e
    if not rows:
        raise ParameterError(f"File {path} is empty")
    return rows


def read_instance(path: PathLike) -> Instance:
    header, *records = _read_lines(Path(path))
    spec = spec_from_header(header)
    try:
        idx = [[i - 1 for i in record["idx"]] for record in records]
        vals = [record["val"] for record in records]
        coef = None
        if spec.family == Family.LWE:
            coef = [[value for _, value in record["coef"]] for record in records]
        ids = [record["id"] for record in records] if records and "id" in records[0] else None
        parents = [record["parents"] for record in records] if records and "parents" in records[0] else None
    except (KeyError, TypeError) as e:
        raise ParameterError(f"Malformed record in {path}: {e}") from e
    try:
        return Instance(spec=spec, idx=idx, vals=vals, coef=coef, ids=ids, parents=parents)
    except ValidationError as e:
        raise ParameterError(f"Invalid instance in {path}: {e}") from e


def write_signal(signal: Signal, path: PathLike) -> None:
    payload: Dict[str, Any] = {"x": signal.x.tolist()}
    if signal.q is not None:
        payload["q"] = signal.q
    _atomic_write(Path(path), iter([_dumps(payload)]))


def read_signal(path: PathLike) -> Signal:
    (payload, *_) = _read_lines(Path(path))
    try:
        return Signal(x=payload["x"], q=payload.get("q"))
    except (KeyError, ValidationError) as e:
        raise ParameterError(f"Invalid signal file {path}: {e}") from e


def write_model(model: BaseModel, path: Optional[PathLike]) -> str:
    text = json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True)
    if path is not None:
        _atomic_write(Path(path), iter([text]))
    return text


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"File {path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParameterError(f"Malformed JSON in {path}: {e}") from e

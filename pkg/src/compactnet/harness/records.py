"""JSONL metrics streams."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable

import jsonschema

METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "metrics record",
    "type": "object",
    "required": ["step"],
    "properties": {
        "step": {"type": "integer", "minimum": 0},
        "loss": {"type": ["number", "null"]},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "f1": {"type": "number", "minimum": 0, "maximum": 1},
        "grad_norm_sq_mean": {"type": "number", "minimum": 0},
        "sparsity": {"type": "number", "minimum": 0, "maximum": 1},
        "bpp": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "lsm_offdiag": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "additionalProperties": {
        "type": ["number", "integer", "string", "boolean", "null", "array"],
    },
}

_validator = jsonschema.Draft202012Validator(METRICS_SCHEMA)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item") and not isinstance(value, (list, tuple)):
        return _clean(value.item()) if getattr(value, "ndim", 0) == 0 else [_clean(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def validate_record(record: dict) -> None:
    _validator.validate(record)


class MetricsWriter:
    """Append validated records to a JSONL file; steps must not decrease."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._last = -1
        self.count = 0

    def write(self, record: dict) -> None:
        rec = {k: _clean(v) for k, v in record.items()}
        validate_record(rec)
        if rec["step"] < self._last:
            raise ValueError(f"step went backwards: {rec['step']} after {self._last}")
        self._last = rec["step"]
        self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        self.count += 1

    __call__ = write

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def records_to_csv(records: Iterable[dict]) -> str:
    records = list(records)
    keys: list[str] = []
    for r in records:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: json.dumps(v) if isinstance(v, list) else v for k, v in r.items()})
    return buf.getvalue()

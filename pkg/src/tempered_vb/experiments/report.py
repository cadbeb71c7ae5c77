"""Run reports: JSON document plus a flat CSV of per-replication records.

Non-finite floats are written as ``{"nonfinite": "inf"}`` (or ``-inf``/``nan``)
so the JSON stays standard; loading restores them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

__all__ = ["RunReport", "RUNTIME_KEYS", "load_report", "strip_runtime", "to_plain"]

RUNTIME_KEYS = frozenset({"runtime_s"})


def to_plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _tag(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _tag(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_tag(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return {"nonfinite": repr(obj)}
    return obj


def _untag(obj: Any) -> Any:
    if isinstance(obj, dict):
        if set(obj) == {"nonfinite"}:
            return float(obj["nonfinite"])
        return {k: _untag(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_untag(v) for v in obj]
    return obj


def strip_runtime(obj: Any) -> Any:
    """Drop wall-clock fields, which are the only nondeterministic content."""
    if isinstance(obj, dict):
        return {k: strip_runtime(v) for k, v in obj.items() if k not in RUNTIME_KEYS}
    if isinstance(obj, list):
        return [strip_runtime(v) for v in obj]
    return obj


@dataclass
class RunReport:
    kind: str
    config: dict[str, Any]
    records: list[dict[str, Any]]
    summary: dict[str, Any]
    version: str
    output_dir_override: Optional[str] = None
    paths: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.config = to_plain(self.config)
        self.records = to_plain(self.records)
        self.summary = to_plain(self.summary)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "version": self.version,
            "output_dir_override": self.output_dir_override,
            "config": self.config,
            "summary": self.summary,
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(_tag(self.to_dict()), indent=2, allow_nan=False)

    def comparable(self) -> dict[str, Any]:
        return strip_runtime(self.to_dict())

    def write(self, path: Union[str, Path]) -> dict[str, str]:
        """Write ``path`` (JSON) and a sibling ``.csv``; returns both paths."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        csv_path = path.with_suffix(".csv")
        columns: list[str] = []
        for rec in self.records:
            columns.extend(k for k in rec if k not in columns)
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            for rec in self.records:
                writer.writerow(
                    {k: json.dumps(_tag(v)) if isinstance(v, (list, dict)) else v for k, v in rec.items()}
                )
        self.paths = {"json": str(path), "csv": str(csv_path)}
        return self.paths


def load_report(path: Union[str, Path]) -> RunReport:
    raw = _untag(json.loads(Path(path).read_text()))
    return RunReport(
        kind=raw["kind"],
        config=raw["config"],
        records=raw["records"],
        summary=raw["summary"],
        version=raw["version"],
        output_dir_override=raw.get("output_dir_override"),
    )

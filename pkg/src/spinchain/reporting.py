"""Experiment reports: deterministic CSV tables and JSON verdicts, written atomically."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def check(op, value, threshold):
    """Evaluate one verdict comparison; ``threshold`` is a number or ``[lo, hi]``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return False
    if op == "<":
        return value < threshold
    if op == "<=":
        return value <= threshold
    if op == ">":
        return value > threshold
    if op == ">=":
        return value >= threshold
    if op == "in":
        lo, hi = threshold
        return lo <= value <= hi
    if op == "==":
        return value == threshold
    raise ValueError(f"unknown comparison {op!r}")


@dataclass
class Verdict:
    """``value op threshold``; ``criterion`` names the acceptance item it serves, if any."""

    name: str
    value: object
    op: str
    threshold: object
    criterion: int = None
    note: str = ""
    passed: bool = field(default=None)

    def __post_init__(self):
        if isinstance(self.value, (np.floating, np.integer)):
            self.value = self.value.item()
        if isinstance(self.value, np.bool_):
            self.value = bool(self.value)
        self.passed = bool(check(self.op, self.value, self.threshold))

    def describe(self):
        thr = f"[{self.threshold[0]:g}, {self.threshold[1]:g}]" if self.op == "in" else f"{self.threshold:g}"
        val = f"{self.value:.6g}" if isinstance(self.value, float) else str(self.value)
        return f"{self.name}: {val} {self.op} {thr} -> {'PASS' if self.passed else 'FAIL'}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def table_csv(columns, rows):
    """Fixed-format CSV text: 17 significant digits, LF newlines, given column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ExperimentReport:
    experiment_id: str
    claim: str
    model_digest: str
    backends: list
    columns: list
    rows: list
    fitted: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    wall_time: float = 0.0
    notes: list = field(default_factory=list)
    csv_path: str = None

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    def verdict(self, name):
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def for_criterion(self, k):
        return [v for v in self.verdicts if v.criterion == k]

    def table_text(self):
        return table_csv(self.columns, self.rows)

    def to_dict(self):
        return _jsonable(
            {
                "schema": SCHEMA_VERSION,
                "experiment_id": self.experiment_id,
                "claim": self.claim,
                "model_digest": self.model_digest,
                "backends": self.backends,
                "csv": self.csv_path,
                "columns": self.columns,
                "fitted": self.fitted,
                "verdicts": [asdict(v) for v in self.verdicts],
                "passed": self.passed,
                "seeds": self.seeds,
                "wall_time_s": self.wall_time,
                "notes": self.notes,
            }
        )

    def write(self, out_dir):
        """Write ``<id>.csv`` and ``<id>.json`` under ``out_dir``; returns the JSON path."""
        out = Path(out_dir)
        csv_path = out / f"{self.experiment_id}.csv"
        write_atomic(csv_path, self.table_text())
        self.csv_path = csv_path.name
        json_path = out / f"{self.experiment_id}.json"
        write_atomic(json_path, json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")
        return json_path

    def summary_lines(self):
        head = f"[{'PASS' if self.passed else 'FAIL'}] {self.experiment_id} ({self.wall_time:.1f} s): {self.claim}"
        return [head] + ["    " + v.describe() for v in self.verdicts]


def load_report(path):
    """Read a JSON report back; verdicts are re-evaluated from their stored thresholds."""
    data = json.loads(Path(path).read_text())
    verdicts = []
    for v in data["verdicts"]:
        v = dict(v)
        v.pop("passed", None)
        verdicts.append(Verdict(**v))
    rep = ExperimentReport(
        experiment_id=data["experiment_id"],
        claim=data["claim"],
        model_digest=data["model_digest"],
        backends=data["backends"],
        columns=data["columns"],
        rows=[],
        fitted=data["fitted"],
        verdicts=verdicts,
        seeds=data["seeds"],
        wall_time=data["wall_time_s"],
        notes=data.get("notes", []),
        csv_path=data.get("csv"),
    )
    return rep

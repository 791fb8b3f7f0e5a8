"""Check records, the report bundle and its JSON / CSV serialisation.

``report.json`` holds only deterministic content (sorted keys, no clock
values).  Wall-clock runtimes and the timestamp go to ``run_meta.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Plain JSON types; numpy scalars/arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def from_jsonable(obj):
    """Inverse of :func:`to_jsonable` for the non-finite float markers."""
    if isinstance(obj, dict):
        return {k: from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest(inputs) -> str:
    """Short SHA-256 of the canonical JSON of ``inputs``."""
    blob = json.dumps(to_jsonable(inputs), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class CheckRecord:
    suite: str
    name: str
    status: str  # pass | fail | skip | error
    inputs: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    message: str | None = None
    runtime: float = 0.0

    def __post_init__(self):
        if self.status not in ("pass", "fail", "skip", "error"):
            raise ValueError(f"bad status {self.status!r}")

    @property
    def passed(self) -> bool | None:
        return None if self.status == "skip" else self.status == "pass"

    def to_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name, "status": self.status, "passed": self.passed,
                "inputs_digest": digest(self.inputs), "residuals": self.residuals,
                "constants": self.constants, "message": self.message}


def environment_stamp() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": sys.platform, "schema": SCHEMA_VERSION}


@dataclass
class ReportBundle:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notices: list = field(default_factory=list)
    traces: dict = field(default_factory=dict, repr=False)  # plot inputs, not serialised
    environment: dict = field(default_factory=environment_stamp)

    def add(self, rec: CheckRecord) -> CheckRecord:
        key = (rec.suite, rec.name)
        if any((r.suite, r.name) == key for r in self.records):
            raise ValueError(f"duplicate check {key}")
        self.records.append(rec)
        return rec

    def sorted_records(self) -> list:
        return sorted(self.records, key=lambda r: (r.suite, r.name))

    @property
    def all_passed(self) -> bool:
        return all(r.status in ("pass", "skip") for r in self.records)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "environment": self.environment, "config": self.config,
                "checks": [r.to_dict() for r in self.sorted_records()], "notices": list(self.notices),
                "summary": {"n_checks": len(self.records),
                            "n_failed": sum(r.status in ("fail", "error") for r in self.records),
                            "passed": self.all_passed}}

    def meta(self, timestamp: str) -> dict:
        return {"generated_at": timestamp,
                "runtimes": {f"{r.suite}/{r.name}": round(r.runtime, 6) for r in self.sorted_records()}}


CSV_COLUMNS = ("suite", "name", "status", "passed", "inputs_digest", "message", "residuals", "constants")


def csv_rows(bundle: ReportBundle) -> list:
    rows = []
    for r in bundle.sorted_records():
        d = r.to_dict()
        rows.append([d["suite"], d["name"], d["status"], "" if d["passed"] is None else str(d["passed"]).lower(),
                     d["inputs_digest"], d["message"] or "",
                     json.dumps(to_jsonable(d["residuals"]), sort_keys=True),
                     json.dumps(to_jsonable(d["constants"]), sort_keys=True)])
    return rows


def emit_report(bundle: ReportBundle, out_dir, fmt: str = "json", timestamp: str | None = None) -> list:
    """Write ``report.json`` or ``report.csv`` plus ``run_meta.json``; return the paths."""
    if fmt not in ("json", "csv"):
        raise ValueError("format is json or csv")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"output directory {out_dir} is not writable: {e.strerror}") from None
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    paths = []
    if fmt == "json":
        p = os.path.join(out_dir, "report.json")
        with open(p, "w") as fh:
            fh.write(dumps(bundle.to_dict()))
    else:
        p = os.path.join(out_dir, "report.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(csv_rows(bundle))
    paths.append(p)
    if timestamp is not None:
        m = os.path.join(out_dir, "run_meta.json")
        with open(m, "w") as fh:
            fh.write(dumps(bundle.meta(timestamp)))
        paths.append(m)
    return paths


def load_report(path) -> dict:
    with open(path) as fh:
        return from_jsonable(json.load(fh))

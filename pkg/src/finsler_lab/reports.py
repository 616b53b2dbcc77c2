"""Inequality reports, JSON-lines/CSV writers and the baseline drift gate."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STATUSES = ("pass", "fail", "measured")


def _clean(obj):
    """Make a value JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass
class InequalityReport:
    """One inequality check.

    ``status`` is "pass"/"fail" for explicit-constant and shape checks, and
    "measured" when only a non-explicit constant is recorded; measured
    reports carry the constant in ``measured`` and no margin.
    """

    ineq_id: str
    lhs: float | None
    rhs: float | None
    status: str
    params: dict = field(default_factory=dict)
    margin: float | None = None
    space: str = ""
    measured: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        if self.margin is None and self.status != "measured" and self.lhs is not None and self.rhs is not None:
            self.margin = float(self.rhs) - float(self.lhs)

    @property
    def passed(self) -> bool | None:
        return None if self.status == "measured" else self.status == "pass"

    @classmethod
    def compare(cls, ineq_id, lhs, rhs, tol=0.0, rel=True, **kw) -> "InequalityReport":
        """lhs <= rhs within tolerance (relative to |rhs| when ``rel``)."""
        slack = tol * abs(rhs) if rel else tol
        ok = bool(lhs <= rhs + slack)
        return cls(ineq_id, float(lhs), float(rhs), "pass" if ok else "fail", margin=float(rhs - lhs), **kw)

    @classmethod
    def shape(cls, ineq_id, ok: bool, lhs=None, rhs=None, **kw) -> "InequalityReport":
        lhs = None if lhs is None else float(lhs)
        rhs = None if rhs is None else float(rhs)
        return cls(ineq_id, lhs, rhs, "pass" if ok else "fail", **kw)

    def params_hash(self) -> str:
        text = json.dumps(_clean(self.params), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    @property
    def key(self) -> str:
        return f"{self.ineq_id}|{self.space}|{self.params_hash()}"

    def to_dict(self) -> dict:
        return _clean(
            {
                "ineq_id": self.ineq_id,
                "space": self.space,
                "params": self.params,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "margin": self.margin,
                "status": self.status,
                "pass": self.passed,
                "measured": self.measured,
                "details": self.details,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


REPORT_KEYS = ("ineq_id", "params", "lhs", "rhs", "margin", "status")


def validate_record(rec: dict) -> None:
    missing = [k for k in REPORT_KEYS if k not in rec]
    if missing:
        raise ValueError(f"report record missing {missing}")
    if rec["status"] not in STATUSES:
        raise ValueError(f"bad status {rec['status']!r}")


def write_jsonl(path: Path, reports) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summary_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["ineq_id", "space", "params_hash", "lhs", "rhs", "margin", "status"])
    for r in reports:
        d = r.to_dict()
        w.writerow([r.ineq_id, r.space, r.params_hash(), d["lhs"], d["rhs"], d["margin"], r.status])
    return buf.getvalue()


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

DRIFT_GATE = 0.10


def baseline_entries(reports) -> dict:
    return {r.key: {"ineq_id": r.ineq_id, "space": r.space, "measured": _clean(r.measured)} for r in reports if r.measured is not None}


def load_baseline(path: Path) -> dict:
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_baseline(path: Path, reports) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(baseline_entries(reports), fh, sort_keys=True, indent=1)
        fh.write("\n")


def drift_check(reports, baseline: dict, gate: float = DRIFT_GATE) -> tuple[list[dict], list[str]]:
    """Compare measured constants to a baseline; returns (drifted, unbaselined keys)."""
    drifted, missing = [], []
    for r in reports:
        if r.measured is None:
            continue
        ref = baseline.get(r.key)
        if ref is None:
            missing.append(r.key)
            continue
        old = ref.get("measured")
        new = r.measured
        if not isinstance(old, (int, float)) or not math.isfinite(new):
            bad = old != _clean(new)
        else:
            scale = max(abs(old), 1e-12)
            bad = abs(new - old) > gate * scale
        if bad:
            drifted.append({"ineq_id": r.ineq_id, "space": r.space, "key": r.key, "baseline": old, "measured": _clean(new)})
    return drifted, missing

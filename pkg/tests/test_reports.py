import json
import math

import numpy as np
import pytest

from finsler_lab.reports import (
    InequalityReport,
    drift_check,
    load_baseline,
    read_jsonl,
    save_baseline,
    summary_csv,
    validate_record,
    write_jsonl,
)


def _reps():
    return [
        InequalityReport.compare("volume_ratio", 3.9, 4.0, space="flat", params={"r1": 1.0}),
        InequalityReport("poincare", 0.29, 1.0, "measured", params={"R": 1.0}, measured=0.29, space="flat"),
    ]


def test_margin_and_status():
    r = InequalityReport.compare("x", 1.0, 2.0)
    assert r.passed and r.margin == 1.0
    assert not InequalityReport.compare("x", 2.5, 2.0).passed
    assert InequalityReport.compare("x", 2.0 + 1e-9, 2.0, tol=1e-8).passed
    m = InequalityReport("c", 1.0, 2.0, "measured", measured=0.5)
    assert m.passed is None and m.margin is None
    with pytest.raises(ValueError):
        InequalityReport("c", 1.0, 2.0, "maybe")


def test_jsonl_roundtrip_and_schema(tmp_path):
    reps = _reps() + [InequalityReport("y", float("inf"), np.float64(1.0), "fail", details={"a": np.arange(2)})]
    write_jsonl(tmp_path / "r.jsonl", reps)
    recs = read_jsonl(tmp_path / "r.jsonl")
    assert len(recs) == 3
    for rec in recs:
        validate_record(rec)
    assert recs[2]["lhs"] == "inf" and recs[2]["details"]["a"] == [0, 1]
    with pytest.raises(ValueError):
        validate_record({"ineq_id": "x"})


def test_summary_csv():
    lines = summary_csv(_reps()).split("\r\n")
    assert lines[0] == "ineq_id,space,params_hash,lhs,rhs,margin,status"
    assert lines[1].startswith("volume_ratio,flat,") and lines[2].endswith(",measured")


def test_params_hash_is_order_independent():
    a = InequalityReport("x", 1, 2, "pass", params={"a": 1, "b": 2})
    b = InequalityReport("x", 1, 2, "pass", params={"b": 2, "a": 1})
    assert a.key == b.key


def test_drift_gate(tmp_path):
    reps = _reps()
    path = tmp_path / "b.json"
    save_baseline(path, reps)
    base = load_baseline(path)
    assert drift_check(reps, base) == ([], [])
    reps[1].measured = 0.29 * 1.09
    assert drift_check(reps, base)[0] == []
    reps[1].measured = 0.29 * 1.11
    drifted, _ = drift_check(reps, base)
    assert [d["ineq_id"] for d in drifted] == ["poincare"]
    assert drift_check(reps, {})[1] == [reps[1].key]
    assert load_baseline(tmp_path / "missing.json") == {}

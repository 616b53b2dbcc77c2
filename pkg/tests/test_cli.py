import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from finsler_lab.cli import main, threads
from finsler_lab.errors import ConfigError
from finsler_lab.reports import read_jsonl

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "default.json"


def write_config(tmp_path, doc, baselines=None):
    cfg = tmp_path / "cfg" / "config.json"
    cfg.parent.mkdir(parents=True, exist_ok=True)
    doc.setdefault("baseline_dir", str(baselines or tmp_path / "baselines"))
    cfg.write_text(json.dumps(doc))
    return cfg


def run(*args):
    return main([str(a) for a in args])


def test_metric_audit_examples(tmp_path):
    doc = {"spaces": {"flat": "flat", "randers": "randers"}, "audit": {"samples": 200}, "suites": {"default": {"spaces": ["flat", "randers"]}}}
    assert run("metric-audit", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o") == 0
    recs = read_jsonl(tmp_path / "o" / "metric_audit.jsonl")
    lam = {r["space"]: r["measured"] for r in recs if r["ineq_id"] == "audit.reversibility"}
    assert lam["flat"] == pytest.approx(1.0) and lam["randers"] == pytest.approx(3.0, rel=1e-6)
    assert all(r["status"] != "fail" for r in recs)


def test_invalid_randers_exits_2(tmp_path, capsys):
    bad = {"name": "bad", "metric": {"variant": "randers", "dimension": 2, "a": "identity", "b": [1.2, 0.0]},
           "log_density": {"family": "lebesgue"}}
    doc = {"spaces": {"bad": bad}, "suites": {"default": {"spaces": ["bad"]}}}
    assert run("metric-audit", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o") == 2
    assert "InvalidMetric" in capsys.readouterr().err


def test_volume_compare(tmp_path, capsys):
    assert run("volume-compare", "--config", CONFIG, "--suite", "flat", "--out", tmp_path / "o") == 0
    header = (tmp_path / "o" / "sigma.csv").read_text().splitlines()[0]
    assert header == "space,r,theta_index,sigma,minimal"
    doc = {"suites": {"default": {"volume": [{"space": "gaussian", "r1": 0.5, "r2": 1.0, "k": 0.5}]}}}
    assert run("volume-compare", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o2") == 2
    err = capsys.readouterr().err
    assert "DomainError" in err and "pi/4" in err


def test_solve_harmonic(tmp_path):
    assert run("solve-harmonic", "--config", CONFIG, "--out", tmp_path / "o") == 0
    recs = read_jsonl(tmp_path / "o" / "residuals.jsonl")
    assert all(r["status"] != "fail" for r in recs)
    exact = [r for r in recs if r["ineq_id"] == "solve.exact_error"]
    assert exact and all(r["lhs"] <= 1e-8 for r in exact)
    assert (tmp_path / "o" / "u_randers_affine.csv").read_text().startswith("node_id,x1,x2,u")


def test_degenerate_mesh_exits_1(tmp_path, capsys):
    d = tmp_path / "cfg"
    d.mkdir()
    (d / "n.csv").write_text("node_id,x1,x2,boundary\n0,0,0,1\n1,1,0,1\n2,2,0,1\n")
    (d / "c.csv").write_text("cell_id,n0,n1,n2\n0,0,1,2\n")
    doc = {
        "meshes": {"bad": {"kind": "csv", "nodes": "n.csv", "cells": "c.csv"}},
        "problems": {"p": {"space": "flat", "mesh": "bad", "boundary": "x1"}},
        "suites": {"default": {"problems": ["p"]}},
    }
    assert run("solve-harmonic", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o") == 1
    assert "DegenerateMesh" in capsys.readouterr().err


def test_liouville_refused_on_hyperbolic(tmp_path, capsys):
    doc = {"suites": {"default": {"inequalities": [{"space": "hyperbolic", "probes": ["liouville"]}]}}}
    assert run("inequalities", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o") == 2
    assert "HypothesisRefused" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert run("inequalities", "--config", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run("inequalities", "--config", tmp_path / "bad.json", "--out", tmp_path / "o") == 2
    doc = {"suites": {"default": {"inequalities": [{"space": "flat", "delta": 2.0}]}}}
    assert run("inequalities", "--config", write_config(tmp_path, doc), "--out", tmp_path / "o") == 2


FAST = {"inequalities": [{"space": "flat", "R": 1.0, "probes": ["poincare", "harnack", "mean_value"]}]}


def test_bless_drift_and_tampering(tmp_path, capsys):
    cfg = write_config(tmp_path, {"suites": {"fast": FAST}})
    assert run("inequalities", "--config", cfg, "--suite", "fast", "--out", tmp_path / "a", "--bless") == 0
    bfile = tmp_path / "baselines" / "fast.json"
    base = json.loads(bfile.read_text())
    assert run("inequalities", "--config", cfg, "--suite", "fast", "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "drift.json").read_text())["drifted"] == []
    key = next(k for k, v in base.items() if v["ineq_id"] == "poincare")
    base[key]["measured"] *= 1.5
    bfile.write_text(json.dumps(base))
    capsys.readouterr()
    assert run("inequalities", "--config", cfg, "--suite", "fast", "--out", tmp_path / "c") == 1
    assert "poincare" in capsys.readouterr().err
    drift = json.loads((tmp_path / "c" / "drift.json").read_text())
    assert [d["ineq_id"] for d in drift["drifted"]] == ["poincare"]


def test_determinism_and_threads(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {"suites": {"fast": FAST}})
    outs = []
    for i, n in enumerate(("1", "4", "4")):
        monkeypatch.setenv("FINSLER_LAB_THREADS", n)
        assert run("inequalities", "--config", cfg, "--suite", "fast", "--out", tmp_path / f"r{i}") == 0
        outs.append((tmp_path / f"r{i}" / "reports.jsonl").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    monkeypatch.setenv("FINSLER_LAB_THREADS", "zero")
    with pytest.raises(ConfigError):
        threads()
    assert run("inequalities", "--config", cfg, "--suite", "fast", "--out", tmp_path / "r9") == 2


def test_console_script(tmp_path):
    exe = shutil.which("finsler-lab")
    cmd = [exe] if exe else [sys.executable, "-m", "finsler_lab.cli"]
    p = subprocess.run(cmd + ["metric-audit", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)], capture_output=True, text=True)
    assert p.returncode == 2

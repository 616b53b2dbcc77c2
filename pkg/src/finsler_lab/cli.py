"""``finsler-lab`` command line: metric audits, volume comparison, harmonic solves, inequality suites.

Exit codes: 0 when every check passes, 1 on a failed check, solver failure,
degenerate mesh or baseline drift, 2 on configuration errors and refused
hypotheses (invalid metric, radius beyond a comparison range, missing
curvature certificate).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .comparison import check_volume_ratio, laplacian_table_check, polar_density, profile_for
from .elliptic import DirichletProblem, maximum_principle_check, solve_harmonic, weak_residual
from .errors import ConfigError, DomainError, FinslerLabError, HypothesisRefused, InvalidMetric
from .harness import ExperimentConfig, run_suite
from .measure import MeasureSpace
from .mesh import Mesh, annulus_mesh, ball_mesh, disk_mesh, rectangle_mesh
from .minkowski import (
    SEED,
    dual,
    dual_fundamental,
    fundamental,
    legendre_inverse_map,
    legendre_map,
    norm,
    reversibility_oracle_randers,
    uniformity_constants,
)
from .reports import InequalityReport, drift_check, load_baseline, save_baseline, summary_csv, write_jsonl
from .spaces import space_from_config

log = logging.getLogger("finsler_lab")

CONFIG_EXIT = 2
FAIL_EXIT = 1
CONFIG_ERRORS = (ConfigError, InvalidMetric, DomainError, HypothesisRefused)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config: str
    suite: str
    out: str
    seed: int
    version: str = __version__
    budget_s: float | None = None
    elapsed_s: float | None = None


def threads() -> int:
    raw = os.environ.get("FINSLER_LAB_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FINSLER_LAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FINSLER_LAB_THREADS must be a positive integer, got {raw!r}")
    return n


def pmap(fn, items):
    """Ordered map over at most FINSLER_LAB_THREADS workers."""
    items = list(items)
    n = min(threads(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def expression(text, n: int = 2):
    """Closed-form expression in x1..xn (sympy syntax) as a vectorized function of (m, n) points."""
    import sympy as sp

    if isinstance(text, (int, float)):
        c = float(text)
        return lambda x: np.full(len(x), c)
    xs = sp.symbols(f"x1:{n + 1}")
    try:
        e = sp.sympify(str(text), locals={f"x{i + 1}": xs[i] for i in range(n)})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from None
    extra = e.free_symbols - set(xs)
    if extra:
        raise ConfigError(f"expression {text!r} uses unknown symbols {sorted(map(str, extra))}")
    f = sp.lambdify(xs, e, "numpy")
    return lambda x: np.broadcast_to(np.asarray(f(*np.asarray(x, float).T), float), (len(x),)).copy()


class Config:
    """A parsed config document: sections spaces, meshes, problems, suites; references by name."""

    def __init__(self, doc: dict, path: Path):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - {"spaces", "meshes", "problems", "suites", "baseline_dir", "audit"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        self.doc = doc
        self.path = path
        self.root = path.parent
        self._spaces: dict[str, MeasureSpace] = {}

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {str(path)!r} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {str(path)!r} is not valid JSON: {exc}") from None
        return cls(doc, path)

    def space(self, name: str) -> MeasureSpace:
        if name not in self._spaces:
            entry = self.doc.get("spaces", {}).get(name, name)
            sp = space_from_config(entry)
            if isinstance(entry, dict) and "name" not in entry and "builtin" not in entry:
                sp = replace(sp, name=name)
            self._spaces[name] = sp
        return self._spaces[name]

    def suite(self, name: str | None) -> tuple[str, dict]:
        suites = self.doc.get("suites", {})
        if not suites:
            raise ConfigError("config has no suites")
        if name is None:
            name = "default" if "default" in suites else sorted(suites)[0]
        if name not in suites:
            raise ConfigError(f"unknown suite {name!r}; choose from {sorted(suites)}")
        return name, suites[name]

    def mesh(self, name: str, space_name: str | None = None) -> Mesh:
        try:
            spec = dict(self.doc["meshes"][name])
        except KeyError:
            raise ConfigError(f"unknown mesh {name!r}") from None
        kind = spec.pop("kind", None)
        try:
            if kind == "rectangle":
                return rectangle_mesh(tuple(spec.get("lo", (0, 0))), tuple(spec.get("hi", (1, 1))), float(spec.get("h", 1 / 16)))
            if kind == "disk":
                return disk_mesh(float(spec.get("R", 1.0)), int(spec.get("rings", 16)), tuple(spec.get("centre", (0, 0))))
            if kind == "annulus":
                return annulus_mesh(float(spec["r_in"]), float(spec["r_out"]), float(spec.get("h", 1 / 16)))
            if kind == "ball":
                sp = self.space(spec.get("space", space_name))
                return ball_mesh(sp, tuple(spec.get("x0", (0, 0))), float(spec.get("R", 1.0)), int(spec.get("rings", 16))).mesh
            if kind == "csv":
                return Mesh.from_csv(self.root / spec["nodes"], self.root / spec["cells"])
        except KeyError as exc:
            raise ConfigError(f"mesh {name!r} is missing {exc}") from None
        raise ConfigError(f"mesh {name!r} has unknown kind {kind!r}")

    def baseline_dir(self) -> Path:
        return (self.root / self.doc.get("baseline_dir", "../baselines")).resolve()


def _experiment(entry: dict, seed: int) -> tuple[ExperimentConfig, tuple | None]:
    entry = dict(entry)
    probes = entry.pop("probes", None)
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(entry) - names
    if unknown:
        raise ConfigError(f"unknown experiment fields {sorted(unknown)}")
    if "x0" in entry:
        entry["x0"] = tuple(entry["x0"])
    entry.setdefault("seed", seed)
    try:
        return ExperimentConfig(**entry), (tuple(probes) if probes is not None else None)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad experiment entry: {exc}") from None


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _tag(reports, space_name: str):
    for r in reports:
        r.space = space_name
    return reports


# --------------------------------------------------------------------------
# metric audit
# --------------------------------------------------------------------------


def audit_space(space: MeasureSpace, samples: int = 1000, seed: int = SEED, tol: float = 1e-8) -> list[InequalityReport]:
    """Legendre round trips, homogeneity, the two ellipticity sandwiches and Lambda."""
    rng = np.random.default_rng(seed)
    metric = space.metric
    n = space.n
    if metric.is_constant:
        xs = np.zeros((samples, n))
    else:
        r = 0.5 * space.domain_radius * np.sqrt(rng.uniform(size=samples))
        d = rng.normal(size=(samples, n))
        xs = r[:, None] * d / np.linalg.norm(d, axis=1, keepdims=True)
    metric.check_valid(xs)
    ys = rng.normal(size=(samples, n))
    F = norm(metric, xs, ys)
    xi = legendre_map(metric, xs, ys)
    back = legendre_inverse_map(metric, xs, xi)
    rt = float(np.max(np.linalg.norm(back - ys, axis=1) / np.linalg.norm(ys, axis=1)))
    fs = float(np.max(np.abs(dual(metric, xs, xi) - F) / F))
    lam = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=samples))
    hom = float(np.max(np.abs(norm(metric, xs, lam[:, None] * ys) - lam * F) / (lam * F)))

    region = None if metric.is_constant else xs[:16]
    uc = uniformity_constants(metric, region)
    ws = rng.normal(size=(samples, n))
    g = fundamental(metric, xs, ys)
    gww = np.einsum("mij,mi,mj->m", g, ws, ws)
    Fw2 = norm(metric, xs, ws) ** 2
    sand = float(np.max(np.maximum(uc.kappa_star * Fw2 - gww, gww - uc.kappa * Fw2) / Fw2))
    eta = rng.normal(size=(samples, n))
    gs = dual_fundamental(metric, xs, xi)
    gee = np.einsum("mij,mi,mj->m", gs, eta, eta)
    Fe2 = dual(metric, xs, eta) ** 2
    kt, kts = 1 / uc.kappa_star, 1 / uc.kappa
    dsand = float(np.max(np.maximum(kts * Fe2 - gee, gee - kt * Fe2) / Fe2))

    params = {"samples": samples, "seed": seed, "tol": tol}
    out = [
        InequalityReport.compare("audit.legendre_roundtrip", rt, tol, rel=False, space=space.name, params=params),
        InequalityReport.compare("audit.dual_of_legendre", fs, tol, rel=False, space=space.name, params=params),
        InequalityReport.compare("audit.homogeneity", hom, tol, rel=False, space=space.name, params=params),
        # sampled kappa's are estimates, so the sandwich carries the same relative tolerance
        InequalityReport.compare(
            "audit.ellipticity", sand, 1e-6, rel=False, space=space.name, params=params,
            details={"kappa": uc.kappa, "kappa_star": uc.kappa_star},
        ),
        InequalityReport.compare(
            "audit.dual_ellipticity", dsand, 1e-6, rel=False, space=space.name, params=params,
            details={"kappa_tilde": kt, "kappa_tilde_star": kts},
        ),
    ]
    bound = min(np.sqrt(uc.kappa), np.sqrt(1 / uc.kappa_star))
    details = {"Lambda": uc.lambda_rev, "kappa": uc.kappa, "kappa_star": uc.kappa_star, "bound": bound}
    A, b = metric.coefficients(np.zeros(n))
    if metric.is_constant and np.allclose(A, np.eye(n)):
        oracle = reversibility_oracle_randers(float(np.linalg.norm(b)))
        details["oracle"] = oracle
        rep = InequalityReport.compare("audit.reversibility", abs(uc.lambda_rev - oracle), tol, rel=False, space=space.name, params=params, details=details)
    else:
        rep = InequalityReport.compare("audit.reversibility", uc.lambda_rev, bound, 1e-6, space=space.name, params=params, details=details)
    rep.measured = uc.lambda_rev
    out.append(rep)
    return out


def cmd_metric_audit(cfg: Config, suite: dict, out: Path, seed: int) -> int:
    names = suite.get("spaces", sorted(cfg.doc.get("spaces", {})))
    samples = int(cfg.doc.get("audit", {}).get("samples", 1000))
    spaces = [cfg.space(n) for n in names]
    reps = pmap(lambda sp: _tag(audit_space(sp, samples, seed), sp.name), spaces)
    reports = [r for rs in reps for r in rs]
    write_jsonl(out / "metric_audit.jsonl", reports)
    return _finish(reports)


# --------------------------------------------------------------------------
# volume comparison
# --------------------------------------------------------------------------


def volume_entry(cfg: Config, entry: dict) -> tuple[list[InequalityReport], str]:
    entry = dict(entry)
    space = cfg.space(entry.pop("space"))
    x0 = np.asarray(entry.get("base_point", [0.0] * space.n), float)
    r1, r2 = float(entry.get("r1", 0.5)), float(entry.get("r2", 1.0))
    n_dirs, n_radii = int(entry.get("n_dirs", 64)), int(entry.get("n_radii", 64))
    tol = float(entry.get("tol", 5e-3))
    c = space.certified
    branches = [b for b, ok in (("S_bound", c.alpha is not None), ("tau_bound", c.k is not None)) if ok]
    branches = entry.get("branches", branches)
    table = polar_density(space, x0, n_dirs, n_radii, r_max=r2)
    reports = []
    for br in branches:
        k = entry.get("k") if br == "tau_bound" else None
        reports.append(check_volume_ratio(space, x0, r1, r2, br, k=k, tol=tol, table=table))
        prof = profile_for(space, br, k=k)
        worst, count = laplacian_table_check(table, prof, tol)
        reports.append(
            InequalityReport.compare(
                f"laplacian_comparison.{br}", worst, tol, rel=False, space=space.name,
                params={"base_point": x0.tolist(), "r_max": r2, "branch": br, "n_dirs": n_dirs, "n_radii": n_radii, "tol": tol},
                details={"samples": count},
            )
        )
    reports.append(
        InequalityReport(
            "volume.ball", None, None, "measured", space=space.name,
            params={"base_point": x0.tolist(), "R": r2, "n_dirs": n_dirs, "n_radii": n_radii}, measured=table.volume(r2),
        )
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    for i, r in enumerate(table.radii):
        for j in range(len(table.thetas)):
            w.writerow([space.name, repr(float(r)), j, repr(float(table.sigma[i, j])), int(table.minimal[i, j])])
    return reports, buf.getvalue()


def cmd_volume_compare(cfg: Config, suite: dict, out: Path, seed: int) -> int:
    entries = suite.get("volume")
    if not entries:
        raise ConfigError("suite has no 'volume' entries")
    results = pmap(lambda e: volume_entry(cfg, e), entries)
    reports = [r for rs, _ in results for r in rs]
    write_jsonl(out / "volume.jsonl", reports)
    _write(out / "sigma.csv", "space,r,theta_index,sigma,minimal\r\n" + "".join(t for _, t in results))
    return _finish(reports)


# --------------------------------------------------------------------------
# harmonic solves
# --------------------------------------------------------------------------


def solve_problem(cfg: Config, name: str) -> tuple[list[InequalityReport], str]:
    try:
        spec = cfg.doc["problems"][name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}") from None
    space = cfg.space(spec.get("space", "flat"))
    n = space.n
    mesh = cfg.mesh(spec["mesh"], spec.get("space"))
    src = spec.get("source")
    prob = DirichletProblem(
        space, mesh, expression(spec.get("boundary", 0.0), n), source=None if src is None else expression(src, n), name=name
    )
    u, info = solve_harmonic(prob, method=spec.get("method", "newton"), return_info=True)
    tol = float(spec.get("tol", 1e-8))
    params = {"problem": name, "mesh": spec["mesh"], "method": info.method, "tol": tol}
    res = weak_residual(prob, u)
    reports = [
        InequalityReport.compare(
            "solve.weak_residual", res, tol * prob.scale, rel=False, space=space.name, params=params,
            details={"iterations": info.iterations, "energy": info.energy, "gradient_residual": info.residual},
        ),
        maximum_principle_check(prob, u),
    ]
    if spec.get("exact") is not None:
        exact = expression(spec["exact"], n)(mesh.nodes)
        err = float(np.max(np.abs(u.values - exact)))
        reports.append(InequalityReport.compare("solve.exact_error", err, tol * prob.scale, rel=False, space=space.name, params=params))
    return _tag(reports, space.name), u.to_csv()


def cmd_solve_harmonic(cfg: Config, suite: dict, out: Path, seed: int) -> int:
    names = suite.get("problems", sorted(cfg.doc.get("problems", {})))
    if not names:
        raise ConfigError("no problems to solve")
    results = pmap(lambda nm: solve_problem(cfg, nm), names)
    reports = []
    for nm, (reps, text) in zip(names, results):
        _write(out / f"u_{nm}.csv", text)
        reports.extend(reps)
    write_jsonl(out / "residuals.jsonl", reports)
    _write(out / "residuals.csv", summary_csv(reports))
    return _finish(reports)


# --------------------------------------------------------------------------
# inequality suites
# --------------------------------------------------------------------------


def cmd_inequalities(cfg: Config, suite: dict, out: Path, seed: int, suite_name: str, bless: bool) -> int:
    entries = suite.get("inequalities")
    if not entries:
        raise ConfigError("suite has no 'inequalities' entries")
    parsed = [_experiment(e, seed) for e in entries]

    def run(item):
        ecfg, probes = item
        space = cfg.space(ecfg.space)
        return _tag(run_suite(space, ecfg, probes), space.name)

    reports = [r for rs in pmap(run, parsed) for r in rs]
    write_jsonl(out / "reports.jsonl", reports)
    _write(out / "summary.csv", summary_csv(reports))
    bpath = cfg.baseline_dir() / f"{suite_name}.json"
    code = _finish(reports)
    if bless:
        if code == 0:
            save_baseline(bpath, reports)
            log.info("blessed %s", bpath)
        return code
    drifted, missing = drift_check(reports, load_baseline(bpath))
    with open(out / "drift.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"baseline": str(bpath), "drifted": drifted, "unbaselined": missing}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for d in drifted:
        print(f"drift: {d['ineq_id']} on {d['space']}: baseline {d['baseline']} -> {d['measured']}", file=sys.stderr)
    for key in missing:
        log.warning("no baseline for %s", key)
    return FAIL_EXIT if drifted else code


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _finish(reports) -> int:
    failed = [r for r in reports if r.status == "fail"]
    for r in failed:
        print(f"FAIL {r.ineq_id} [{r.space}] lhs={r.lhs} rhs={r.rhs} margin={r.margin}", file=sys.stderr)
    return FAIL_EXIT if failed else 0


COMMANDS = ("metric-audit", "volume-compare", "solve-harmonic", "inequalities")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsler-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON config with spaces, meshes, problems, suites")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=SEED, help="random seed (default 0x5EED)")
    p.add_argument("--suite", default=None, help="suite name (default: 'default')")
    p.add_argument("--bless", action="store_true", help="write measured constants as the new baseline")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = Config.load(args.config)
        suite_name, suite = cfg.suite(args.suite)
        args.out.mkdir(parents=True, exist_ok=True)
        threads()
        if args.command == "metric-audit":
            code = cmd_metric_audit(cfg, suite, args.out, args.seed)
        elif args.command == "volume-compare":
            code = cmd_volume_compare(cfg, suite, args.out, args.seed)
        elif args.command == "solve-harmonic":
            code = cmd_solve_harmonic(cfg, suite, args.out, args.seed)
        else:
            code = cmd_inequalities(cfg, suite, args.out, args.seed, suite_name, args.bless)
    except CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except FinslerLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FAIL_EXIT
    manifest = RunManifest(
        args.command, str(args.config), suite_name, str(args.out), args.seed,
        budget_s=suite.get("budget_s"), elapsed_s=round(time.perf_counter() - t0, 3),
    )
    with open(args.out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.__dict__, fh, sort_keys=True, indent=1)
        fh.write("\n")
    if manifest.budget_s is not None and manifest.elapsed_s > manifest.budget_s:
        log.warning("run took %.1f s, over the %.1f s budget", manifest.elapsed_s, manifest.budget_s)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Empirical checks of the mean-value, Harnack, gradient and Liouville inequalities.

Every check runs on a forward geodesic ball meshed through the exponential
map (see :class:`~finsler_lab.mesh.Ball`), so sub-balls B_{delta R} are exact
unions of rings. Non-explicit constants are recorded as ``measured``;
inequalities with explicit or measured-and-plugged-in constants are pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import eigsh

from .elliptic import DirichletProblem, _assemble, _cell_terms, check_subsolution, energy_gradient, solve_harmonic
from .errors import (
    DomainError,
    HypothesisRefused,
    InsufficientRegularity,
    NonPositive,
    PreconditionFailed,
    UnsupportedSpace,
)
from .measure import MeasureSpace
from .mesh import _MID, Ball, ball_mesh
from .minkowski import SEED, dual_coefficients, form_hessian_half_sq, form_norm, uniformity_constants
from .reports import InequalityReport

# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def nu_for(n: int, k: float) -> float:
    return 4.0 * (n + 4.0 * k) - 2.0


def radius_cap(n: int, K: float) -> float:
    """Largest admissible radius for a positive signed bound Ric_inf >= K > 0."""
    return math.pi / 4 * math.sqrt((n - 1) / K) if K > 0 else math.inf


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one harness run; K, k, alpha default to the space certificate."""

    space: str
    x0: tuple = (0.0, 0.0)
    R: float = 1.0
    delta: float = 0.5
    delta2: float = 1.0
    rho: float = 0.5
    p: float = 2.0
    a: float = 1.0
    K: float | None = None
    k: float | None = None
    alpha: float | None = None
    rings: int = 24
    seed: int = SEED
    tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.delta < self.delta2 <= 1:
            raise ValueError(f"need 0 < delta < delta' <= 1, got {self.delta}, {self.delta2}")
        if not 0 < self.p <= 2:
            raise ValueError(f"p must lie in (0, 2], got {self.p}")
        if self.a < 1:
            raise ValueError(f"a must be >= 1, got {self.a}")
        if self.R <= 0 or not 0 < self.rho <= 1:
            raise ValueError("need R > 0 and 0 < rho <= 1")
        if self.rings < 4:
            raise ValueError("need at least 4 rings")
        if self.k is not None and self.k < 0:
            raise ValueError("k must be nonnegative")

    def constants(self, space: MeasureSpace) -> tuple[float, float, float]:
        c = space.certified
        K = c.K if self.K is None else self.K
        k = (c.k if c.k is not None else 0.0) if self.k is None else self.k
        alpha = (c.alpha if c.alpha is not None else 0.0) if self.alpha is None else self.alpha
        return float(K), float(k), float(alpha)

    def nu(self, space: MeasureSpace) -> float:
        return nu_for(space.n, self.constants(space)[1])

    def check_caps(self, space: MeasureSpace) -> None:
        K = self.constants(space)[0]
        cap = radius_cap(space.n, K)
        if self.R > cap:
            raise DomainError(f"R = {self.R} exceeds the admissible radius {cap:.6g} for Ric_inf >= {K} > 0")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        return d


# --------------------------------------------------------------------------
# ball helpers
# --------------------------------------------------------------------------


def _problem(ball: Ball) -> DirichletProblem:
    prob = getattr(ball, "_problem", None)
    if prob is None:
        prob = DirichletProblem(ball.space, ball.mesh, np.zeros(ball.mesh.n_nodes), name="ball")
        ball._problem = prob
    return prob


def _check_ball(space: MeasureSpace, ball: Ball) -> None:
    if ball.space is not space and ball.space.name != space.name:
        raise ValueError(f"ball was built for space {ball.space.name!r}, not {space.name!r}")


def dual_norms(ball: Ball, u: np.ndarray) -> np.ndarray:
    """F*(du) per cell."""
    H, bs = _problem(ball).coef
    return form_norm(H, bs, ball.mesh.cell_gradients(np.asarray(u, float)))


def energy2(ball: Ball, u: np.ndarray, delta: float = 1.0) -> float:
    """int_{B_{delta R}} F*^2(du) dm."""
    cm = ball.mesh.measure(ball.space).cell_mass
    sel = ball.cell_mask(delta)
    return float(np.sum(cm[sel] * dual_norms(ball, u)[sel] ** 2))


def mass_matrix(ball: Ball):
    """Consistent mass matrix of the edge-midpoint rule with weight e^Phi."""
    M = getattr(ball, "_mass", None)
    if M is None:
        mesh = ball.mesh
        qw = mesh.measure(ball.space).qw
        Mc = np.einsum("mq,qk,ql->mkl", qw, _MID, _MID)
        rows = np.repeat(mesh.cells, 3, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, 3)).ravel()
        M = coo_matrix((Mc.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
        ball._mass = M
    return M


def variance(ball: Ball, u: np.ndarray) -> float:
    """int |u - ubar|^2 dm over the whole ball."""
    M = mass_matrix(ball)
    Mu = M @ u
    one = np.ones_like(u)
    m = float(one @ (M @ one))
    return float(u @ Mu - (one @ Mu) ** 2 / m)


def rayleigh_quotient(ball: Ball, u: np.ndarray) -> float | None:
    """Poincare quotient int|u-ubar|^2 / int F*^2(du); None for constant u (0/0)."""
    u = np.asarray(u, float)
    scale = max(1.0, float(np.max(np.abs(u))))
    if np.ptp(u) <= 1e-12 * scale:
        return None
    E = energy2(ball, u)
    if E <= 0:
        return None
    return variance(ball, u) / E


def _ball_with(space: MeasureSpace, cfg: ExperimentConfig, R: float | None = None, rings: int | None = None) -> Ball:
    return ball_mesh(space, cfg.x0, cfg.R if R is None else R, cfg.rings if rings is None else rings)


def _report(ineq_id, space, cfg_params, **kw) -> InequalityReport:
    return InequalityReport(ineq_id, space=space.name, params=cfg_params, **kw)


def _params(ball: Ball, **extra) -> dict:
    p = {"R": ball.R, "x0": list(np.asarray(ball.center, float)), "rings": ball.rings}
    p.update(extra)
    return p


# --------------------------------------------------------------------------
# trial family
# --------------------------------------------------------------------------


def harmonic_on(ball: Ball, boundary) -> np.ndarray:
    """Solve the Dirichlet problem on the ball; ``boundary`` maps unit-disk params to values."""
    data = np.asarray(boundary(ball.param), float) * np.ones(ball.mesh.n_nodes)
    prob = DirichletProblem(ball.space, ball.mesh, data, name="ball-harmonic")
    prob._coef = _problem(ball).coef
    return solve_harmonic(prob).values


def trial_family(ball: Ball, seed: int = SEED) -> list[tuple[str, np.ndarray]]:
    """40 deterministic trial functions on the ball, in unit-disk parameter coordinates.

    8 hats, 4 cones, 4 plateaus, 4 harmonic solver outputs and 20 random
    Gaussian bumps drawn from a fixed seed.
    """
    P = ball.param
    d = np.linalg.norm(P, axis=1)
    out = []
    for j in range(8):
        c = 0.5 * np.array([math.cos(2 * math.pi * j / 8), math.sin(2 * math.pi * j / 8)])
        out.append((f"hat{j}", np.maximum(0.0, 1.0 - np.linalg.norm(P - c, axis=1) / 0.5)))
    for e in (0.5, 1.0, 2.0, 3.0):
        out.append((f"cone{e:g}", d**e))
    for d1, d2 in ((0.25, 0.5), (0.5, 0.75), (0.25, 1.0), (0.5, 1.0)):
        out.append((f"plateau{d1:g}-{d2:g}", np.clip((d2 - d) / (d2 - d1), 0.0, 1.0)))
    for name, g in (
        ("solve_x1", lambda q: q[:, 0]),
        ("solve_x2", lambda q: q[:, 1]),
        ("solve_-x1", lambda q: -q[:, 0]),
        ("solve_re_z2", lambda q: q[:, 0] ** 2 - q[:, 1] ** 2),
    ):
        out.append((name, harmonic_on(ball, g)))
    rng = np.random.default_rng(seed)
    for j in range(20):
        u = np.zeros(len(P))
        for _ in range(2):
            r, th = 0.8 * math.sqrt(rng.uniform()), rng.uniform(0, 2 * math.pi)
            c = r * np.array([math.cos(th), math.sin(th)])
            w = rng.uniform(0.1, 0.5)
            u += rng.choice([-1.0, 1.0]) * np.exp(-np.sum((P - c) ** 2, axis=1) / (2 * w * w))
        out.append((f"bump{j}", u))
    return out


# --------------------------------------------------------------------------
# Poincare and Sobolev quotients
# --------------------------------------------------------------------------


def neumann_quotient(ball: Ball) -> tuple[float, np.ndarray]:
    """1/lambda_1 of the Neumann problem for the Riemannian part of F*, and its eigenvector."""
    K = _assemble(_problem(ball), _problem(ball).coef[0])
    M = mass_matrix(ball)
    # a fixed start vector; ARPACK's own random start varies between calls
    v0 = np.random.default_rng(SEED).uniform(0.5, 1.5, size=K.shape[0])
    vals, vecs = eigsh(K, k=3, M=M, sigma=-1e-3 / max(ball.R, 1e-12) ** 2, which="LM", v0=v0)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    lam = vals[1] if vals[0] < 1e-8 * vals[-1] else vals[0]
    v = vecs[:, 1] if vals[0] < 1e-8 * vals[-1] else vecs[:, 0]
    return float(1.0 / lam), v


def _ascend(ball: Ball, u0: np.ndarray, max_iter: int = 200) -> tuple[float, np.ndarray]:
    """Local ascent of the quotient under the true F*^2 energy (maximize log Q)."""
    prob = _problem(ball)
    M = mass_matrix(ball)
    one = np.ones_like(u0)
    M1 = M @ one
    m = float(one @ M1)

    def f(u):
        Mu = M @ u
        mean = float(one @ Mu) / m
        V = float(u @ Mu) - mean * mean * m
        Fs, _, _ = _cell_terms(prob, u)
        cm = ball.mesh.measure(ball.space).cell_mass
        E = float(np.sum(cm * Fs**2))
        if V <= 0 or E <= 0:
            return 0.0, np.zeros_like(u)
        gV = 2 * Mu - 2 * mean * M1
        gE = 2 * energy_gradient(prob, u)
        return -(math.log(V) - math.log(E)), -(gV / V - gE / E)

    res = minimize(f, u0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": 1e-10})
    q = rayleigh_quotient(ball, res.x)
    return (q if q is not None else 0.0), res.x


def poincare_quotient(space: MeasureSpace, ball: Ball, ascent: bool | None = None, family=None) -> InequalityReport:
    """Largest Poincare quotient found; reported as a measured constant divided by R^2."""
    _check_ball(space, ball)
    q_eig, v = neumann_quotient(ball)
    best, arg = q_eig, "neumann"
    fam = trial_family(ball) if family is None else family
    excluded = 0
    q_family = 0.0
    for name, u in fam:
        q = rayleigh_quotient(ball, u)
        if q is None:
            excluded += 1
            continue
        q_family = max(q_family, q)
        if q > best:
            best, arg = q, name
    # the eigenvector is already optimal when F* is Riemannian
    if ascent is None:
        ascent = not space.metric.is_riemannian
    q_asc = None
    if ascent:
        for sgn in (1.0, -1.0):
            q, _ = _ascend(ball, sgn * v)
            q_asc = q if q_asc is None else max(q_asc, q)
            if q > best:
                best, arg = q, f"ascent{'+' if sgn > 0 else '-'}"
    R2 = ball.R**2
    return _report(
        "poincare",
        space,
        _params(ball),
        lhs=best,
        rhs=R2,
        status="measured",
        measured=best / R2,
        details={
            "neumann_quotient": q_eig,
            "family_max": q_family,
            "ascent_max": q_asc,
            "argmax": arg,
            "excluded_constant": excluded,
            "family_size": len(fam),
        },
    )


def _q_integral(ball: Ball, vals: np.ndarray, power: float, delta: float = 1.0) -> float:
    return ball.integrate(np.abs(vals), delta, power) if power != 1.0 else ball.integrate(np.abs(vals), delta)


def sobolev_ratios(ball: Ball, u: np.ndarray, nu: float) -> tuple[float | None, float]:
    """(mean-subtracted ratio, variant ratio) for one function.

    The first divides (int|u-ubar|^q)^{2/q} by R^2 m^{-2/nu} int F*^2(du)
    (None for constant u); the variant divides (int|u|^q)^{2/q} by the same
    factor times int (F*^2(du) + R^{-2} u^2).
    """
    q = 2 * nu / (nu - 2)
    m = ball.volume()
    R = ball.R
    norm = R * R * m ** (-2.0 / nu)
    E = energy2(ball, u)
    u2 = ball.integrate(np.asarray(u) ** 2)
    lhs_v = _q_integral(ball, u, q) ** (2.0 / q)
    variant = lhs_v / (norm * (E + u2 / (R * R)))
    r = rayleigh_quotient(ball, u)
    if r is None:
        return None, variant
    ubar = ball.average(u)
    lhs = _q_integral(ball, np.asarray(u) - ubar, q) ** (2.0 / q)
    return lhs / (norm * E), variant


def sobolev_quotient(space: MeasureSpace, ball: Ball, k: float | None = None, family=None) -> InequalityReport:
    """Measured Sobolev constant over the trial family; the variant ratio is recorded alongside."""
    _check_ball(space, ball)
    k = (space.certified.k or 0.0) if k is None else k
    nu = nu_for(space.n, k)
    fam = trial_family(ball) if family is None else family
    best, best_v, arg = 0.0, 0.0, None
    for name, u in fam:
        r, rv = sobolev_ratios(ball, u, nu)
        best_v = max(best_v, rv)
        if r is not None and r > best:
            best, arg = r, name
    _, const_variant = sobolev_ratios(ball, np.ones(ball.mesh.n_nodes), nu)
    return _report(
        "sobolev",
        space,
        _params(ball, k=k),
        lhs=best,
        rhs=None,
        status="measured",
        measured=best,
        details={
            "nu": nu,
            "exponent": 2 * nu / (nu - 2),
            "variant_max": best_v,
            "constant_variant_ratio": const_variant,
            "argmax": arg,
        },
    )


def variant_constant(ball: Ball, funcs, nu: float) -> float:
    """Measured B in ||w||^2_{q} <= B int (F*^2(dw) + R^{-2} w^2) over the given functions."""
    m = ball.volume()
    norm = ball.R**2 * m ** (-2.0 / nu)
    return max(sobolev_ratios(ball, u, nu)[1] for u in funcs) * norm


# --------------------------------------------------------------------------
# mean value and the Moser chain
# --------------------------------------------------------------------------


def _require_subsolution(ball: Ball, u: np.ndarray, f, orientation: str = "sub") -> InequalityReport:
    prob = _problem(ball)
    rep = check_subsolution(prob, u, f=f, orientation=orientation)
    if not rep.passed:
        raise PreconditionFailed(f"u is not a weak {orientation}solution (worst margin {rep.margin:.3g})")
    return rep


def mean_value_check(
    space: MeasureSpace, ball: Ball, u, f=None, p: float = 2.0, delta: float = 0.5, k: float | None = None
) -> InequalityReport:
    """Measured constant sup_{B_{delta R}} u^p / avg_{B_R} u^p with the shape factor beside it."""
    _check_ball(space, ball)
    u = np.asarray(u, float)
    if not 0 < p <= 2:
        raise ValueError("p must lie in (0, 2]")
    if np.min(u) < 0:
        raise PreconditionFailed("u must be nonnegative")
    f = np.zeros_like(u) if f is None else np.broadcast_to(np.asarray(f, float), u.shape)
    _require_subsolution(ball, u, f)
    k = (space.certified.k or 0.0) if k is None else k
    nu = nu_for(space.n, k)
    A = float(np.max(np.abs(f)))
    sup = ball.sup(u**p, delta)
    avg = ball.average(u, 1.0, power=p)
    shape = (1 + A * ball.R**2) ** (nu / 2) * (1 - delta) ** (-nu)
    C = sup / avg if avg > 0 else (1.0 if sup == 0 else math.inf)
    return _report(
        "mean_value",
        space,
        _params(ball, p=p, delta=delta, k=k),
        lhs=sup,
        rhs=avg,
        status="measured",
        measured=C,
        details={"nu": nu, "A": A, "shape": shape, "normalized": C / shape},
    )


def mean_value_monotonicity(space, ball, u, f=None, p=2.0, deltas=(0.75, 0.5, 0.25)) -> InequalityReport:
    """Shape check: the measured constant does not increase as delta decreases."""
    Cs = [mean_value_check(space, ball, u, f, p, d).measured for d in deltas]
    ok = all(Cs[i + 1] <= Cs[i] * (1 + 1e-12) for i in range(len(Cs) - 1))
    return InequalityReport.shape(
        "mean_value.monotone_delta", ok, Cs[-1], Cs[0], space=space.name, params=_params(ball, p=p, deltas=list(deltas)), details={"C": Cs}
    )


def moser_schedule(delta: float, steps: int) -> list[float]:
    """delta_0 = 1, delta_{i+1} = delta_i - (1 - delta) / 2^{i+1}."""
    ds = [1.0]
    for i in range(steps):
        ds.append(ds[-1] - (1 - delta) / 2 ** (i + 1))
    return ds


def _moser_step(ball, u, a, d_in, d_out, Bfam, Lam, nu, A=0.0):
    t = 1 + 2 / nu
    phi = ball.cutoff(d_in, d_out)
    w = u**a * phi**a
    B = max(Bfam, variant_constant(ball, [w], nu))
    Theta = 11 * a * a * Lam * Lam * (1 + A * ball.R**2)
    lhs = ball.integrate(u, d_in, power=2 * a * t)
    base = ball.integrate(u, d_out, power=2 * a)
    rhs = B * Theta / ((d_out - d_in) ** 2 * ball.R**2) * base**t
    return lhs, rhs, B


def moser_chain_check(
    space: MeasureSpace,
    ball: Ball,
    u,
    a: float = 1.0,
    delta: float = 0.5,
    delta2: float = 1.0,
    steps: int = 4,
    k: float | None = None,
    tol: float = 1e-10,
    seed: int = SEED,
) -> InequalityReport:
    """Single reverse-Holder step on (delta, delta') plus the iterated schedule.

    The Sobolev constant B is measured on the trial family together with the
    very function w = u^a phi^a the step needs, so the step inequality is
    implied by the measured constant and a failure points at a bug.
    """
    _check_ball(space, ball)
    u = np.asarray(u, float)
    if np.min(u) < 0:
        raise PreconditionFailed("u must be nonnegative")
    _require_subsolution(ball, u, None)
    k = (space.certified.k or 0.0) if k is None else k
    nu = nu_for(space.n, k)
    t = 1 + 2 / nu
    pts = ball.mesh.nodes
    Lam = uniformity_constants(space.metric, [pts.min(0), pts.max(0)], resolution=64, n_points=8).lambda_rev
    Bfam = variant_constant(ball, [f for _, f in trial_family(ball, seed)], nu)

    rows = []
    lhs, rhs, B = _moser_step(ball, u, a, delta, delta2, Bfam, Lam, nu)
    rows.append({"step": "single", "a": a, "delta": delta, "delta2": delta2, "lhs": lhs, "rhs": rhs, "B": B})
    ds = moser_schedule(delta, steps)
    # exponents a_i = a t^i; the chain bounds ||u^2||_{L^{a t^{i+1}}(B_{delta_{i+1}})}
    norms, bounds = [], []
    bound_log = math.log(max(ball.integrate(u, 1.0, power=2 * a), 1e-300)) / a
    for i in range(steps):
        ai = a * t**i
        di, do = ball.ring_delta(ds[i + 1]), ball.ring_delta(ds[i])
        l, r, B = _moser_step(ball, u, ai, di, do, Bfam, Lam, nu)
        rows.append({"step": i, "a": ai, "delta": di, "delta2": do, "lhs": l, "rhs": r, "B": B})
        norms.append(l ** (1 / (ai * t)) if l > 0 else 0.0)
        C = B * 11 * ai * ai * Lam * Lam / ((do - di) ** 2 * ball.R**2)
        bound_log = (math.log(C) + t * ai * bound_log) / (ai * t)
        bounds.append(math.exp(bound_log))
    ok = all(row["lhs"] <= row["rhs"] * (1 + tol) for row in rows)
    worst = min(rows, key=lambda r: (r["rhs"] - r["lhs"]) / max(abs(r["rhs"]), 1e-300))
    sup2 = ball.sup(u**2, ds[-1])
    return _report(
        "moser_chain",
        space,
        _params(ball, a=a, delta=delta, delta2=delta2, steps=steps, k=k),
        lhs=worst["lhs"],
        rhs=worst["rhs"],
        status="pass" if ok else "fail",
        details={
            "nu": nu,
            "t": t,
            "Lambda": Lam,
            "B_family": Bfam,
            "steps": rows,
            "norms": norms,
            "bounds": bounds,
            "sup2_inner": sup2,
            "final_bound_dominates_sup2": bool(bounds[-1] >= sup2 * (1 - 1e-6)) if bounds else None,
        },
    )


# --------------------------------------------------------------------------
# Harnack-type checks
# --------------------------------------------------------------------------


def _require_positive(u: np.ndarray, what: str = "u") -> None:
    if np.min(u) <= 0:
        raise NonPositive(f"{what} must be positive on the ball (min {float(np.min(u)):.3g})")


def harnack_check(space: MeasureSpace, ball: Ball, u, delta: float = 0.5, K: float | None = None) -> InequalityReport:
    """Measured ratio sup/inf on B_{delta R}, with its invariance under u -> lambda u."""
    _check_ball(space, ball)
    u = np.asarray(u, float)
    _require_positive(u)
    ratio = ball.sup(u, delta) / ball.inf(u, delta)
    inv_err = max(abs(ball.sup(lam * u, delta) / ball.inf(lam * u, delta) - ratio) for lam in (0.37, 2.9, 1e3))
    K = space.certified.K if K is None else K
    shape = math.log(ratio) / (1 + math.sqrt(abs(K)) * ball.R)
    return _report(
        "harnack",
        space,
        _params(ball, delta=delta),
        lhs=ball.sup(u, delta),
        rhs=ball.inf(u, delta),
        status="measured",
        measured=ratio,
        details={"scale_invariance_error": inv_err, "scale_invariant": bool(inv_err <= 1e-10 * ratio), "log_shape": shape},
    )


def harnack_monotonicity(space, ball, u, deltas=(0.75, 0.5, 0.25)) -> InequalityReport:
    """Shape check: the ratio does not increase on smaller concentric balls."""
    rs = [harnack_check(space, ball, u, d).measured for d in deltas]
    ok = all(rs[i + 1] <= rs[i] for i in range(len(rs) - 1))
    return InequalityReport.shape(
        "harnack.monotone_delta", ok, rs[-1], rs[0], space=space.name, params=_params(ball, deltas=list(deltas)), details={"ratios": rs}
    )


def superharmonic_inf_check(space: MeasureSpace, ball: Ball, u, delta: float = 0.5) -> InequalityReport:
    """Measured constant sup_{B_{delta R}} u^{-1} / avg_{B_R} u^{-1} for a positive supersolution."""
    _check_ball(space, ball)
    u = np.asarray(u, float)
    if np.min(u) <= 0:
        raise PreconditionFailed("u must be positive")
    _require_subsolution(ball, u, None, orientation="super")
    inv = 1.0 / u
    sup = ball.sup(inv, delta)
    avg = ball.average(inv)
    return _report(
        "superharmonic_inf",
        space,
        _params(ball, delta=delta),
        lhs=sup,
        rhs=avg,
        status="measured",
        measured=sup / avg,
        details={"inf_lower_bound": 1.0 / sup},
    )


def weak_l1_log_check(
    space: MeasureSpace, ball: Ball, u, delta: float = 0.5, delta2: float = 1.0, ts=None, tol: float = 1e-10
) -> InequalityReport:
    """Weak-L1 estimate for v = log u through Chebyshev, Cauchy-Schwarz, Poincare and the Dirichlet bound.

    Each link of the chain L0 <= L1 <= L2 <= L3 <= L4 is checked; L4 / m(B_R)
    is the measured constant. The Dirichlet bound on int_{B_{delta R}}F^2(grad v)
    uses Lambda from the sampled reversibility constant.
    """
    _check_ball(space, ball)
    u = np.asarray(u, float)
    _require_positive(u)
    delta = ball.ring_delta(delta)
    v = np.log(u)
    vbar = ball.average(v, delta)
    mesh = ball.mesh
    mm = mesh.measure(space)
    sel = ball.cell_mask(delta)
    dev = np.abs(mesh.at_quadrature(v) - vbar)[sel]
    # deviations at rounding level (constant u) are exactly zero
    dev[dev <= 1e-13 * max(1.0, abs(vbar))] = 0.0
    qw = mm.qw[sel]
    ts = np.geomspace(1e-3, 10.0, 25) if ts is None else np.asarray(ts, float)
    level = np.array([t * float(np.sum(qw * (dev >= t))) for t in ts])
    m_d = ball.volume(delta)
    L0 = float(level.max())
    L1 = float(np.sum(qw * dev))
    L2 = math.sqrt(float(np.sum(qw * dev**2)) * m_d)
    E_v = energy2(ball, v, delta)
    pts = mesh.nodes
    Lam = uniformity_constants(space.metric, [pts.min(0), pts.max(0)], resolution=64, n_points=8).lambda_rev
    D_rhs = 4 * Lam * Lam / ((delta2 - delta) ** 2 * ball.R**2) * ball.volume(delta2)
    if np.ptp(v) <= 1e-14:
        C_P = 0.0
    else:
        sub = ball.sub_ball(delta)
        keep = mesh.node_dist <= sub.R * (1 + 1e-12)
        C_P = max(neumann_quotient(sub)[0], rayleigh_quotient(sub, v[keep]) or 0.0)
    L3 = math.sqrt(C_P * E_v * m_d)
    L4 = math.sqrt(C_P * D_rhs * m_d)
    chain = [L0, L1, L2, L3, L4]
    ok_chain = all(chain[i] <= chain[i + 1] * (1 + tol) + 1e-300 for i in range(4))
    ok_dir = E_v <= D_rhs * (1 + tol)
    C_emp = L4 / ball.volume()
    return _report(
        "weak_l1_log",
        space,
        _params(ball, delta=delta, delta2=delta2),
        lhs=L0,
        rhs=L4,
        status="pass" if ok_chain and ok_dir else "fail",
        measured=C_emp,
        details={
            "chain": chain,
            "dirichlet_lhs": E_v,
            "dirichlet_rhs": D_rhs,
            "Lambda": Lam,
            "poincare_constant": C_P,
            "level_sets": level.tolist(),
            "osc_v": float(np.ptp(v[ball.node_mask(delta)])),
        },
    )


# --------------------------------------------------------------------------
# gradient estimate and its Bochner-type subsolution lemma
# --------------------------------------------------------------------------


def _two_ring(mesh):
    """Sparse node adjacency of the two-ring patches (cached on the mesh)."""
    A2 = getattr(mesh, "_two_ring", None)
    if A2 is None:
        from scipy.sparse import csr_matrix

        n = mesh.n_nodes
        rows = np.repeat(mesh.cells, 3, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, 3)).ravel()
        A = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        A2 = (A @ A).tocsr()
        mesh._two_ring = A2
    return A2


def recovered_gradient(mesh, u: np.ndarray) -> np.ndarray:
    """Nodal du from a least-squares quadratic fit over each node's two-ring patch.

    Exact for quadratic u. Averaging cell gradients is only first order on
    the ring meshes, which is too noisy to see the sign of a Laplacian.
    """
    A2 = _two_ring(mesh)
    out = np.empty((mesh.n_nodes, 2))
    for i in range(mesh.n_nodes):
        nb = A2.indices[A2.indptr[i] : A2.indptr[i + 1]]
        d = mesh.nodes[nb] - mesh.nodes[i]
        V = np.column_stack([np.ones(len(nb)), d, d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
        out[i] = np.linalg.lstsq(V, u[nb], rcond=None)[0][1:3]
    return out


def lemma_subsolution_test(
    space: MeasureSpace, ball: Ball, u, K: float | None = None, delta: float = 0.75, crit_frac: float = 0.1
) -> InequalityReport:
    """int dphi(grad^{grad u} h) dm <= 2K int phi h dm for h = F^2(grad u), hats within B_{delta R}.

    h is evaluated at the nodes from a recovered gradient; grad^{grad u} h uses the
    frozen matrix g*(du) per cell. K is the nonnegative constant in
    Ric_inf >= -K, i.e. max(0, -certified K). Hats whose two-ring patch
    meets {F*(du) <= crit_frac * max F*(du)} are excluded.
    """
    u = np.asarray(u, float)
    prob = _problem(ball)
    mesh = ball.mesh
    K = max(0.0, -space.certified.K) if K is None else K
    cm = mesh.measure(space).cell_mass
    Hn, bn = dual_coefficients(space.metric, mesh.nodes)
    Fn = form_norm(Hn, bn, recovered_gradient(mesh, u))
    h = Fn**2
    # F*^2 is only C^1 at du = 0 unless F is Riemannian, so hats reaching the
    # near-critical set see a non-smooth h; they are left out and counted
    crit = Fn <= crit_frac * max(float(Fn.max()), 1e-300)
    near_crit = (_two_ring(mesh) @ crit.astype(float)) > 0
    du = mesh.cell_gradients(u)
    zero = np.all(du == 0, axis=1)
    H, bs = prob.coef
    G = np.where(zero[:, None, None], H, form_hessian_half_sq(H, bs, np.where(zero[:, None], 1.0, du)))
    Gdh = np.einsum("mij,mj->mi", G, mesh.cell_gradients(h))
    contrib = cm[:, None] * np.einsum("mkd,md->mk", mesh.grad_basis, Gdh)
    lhs = np.bincount(mesh.cells.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)
    from .elliptic import hat_products

    rhs = 2 * K * hat_products(prob, mesh.at_quadrature(h))
    region = mesh.interior & (mesh.node_dist <= delta * ball.R * (1 + 1e-12))
    test = region & ~near_crit
    tol = 1e-6 * max(float(np.max(np.abs(lhs[test]))), 1e-300) if np.any(test) else 0.0
    slack = (rhs - lhs)[test]
    i = int(np.argmin(slack)) if len(slack) else 0
    margin = float(slack[i]) if len(slack) else 0.0
    return _report(
        "gradient.lemma_subsolution",
        space,
        _params(ball, K=K, delta=delta),
        lhs=float(lhs[test][i]) if len(slack) else 0.0,
        rhs=float(rhs[test][i]) if len(slack) else 0.0,
        status="pass" if margin >= -tol else "fail",
        margin=margin,
        details={"tol": tol, "tested_hats": int(test.sum()), "excluded_near_critical": int((region & near_crit).sum())},
    )


def gradient_estimate_check(
    space: MeasureSpace, ball: Ball, u, delta: float = 0.5, k: float | None = None
) -> InequalityReport:
    """Measured bound on max{F(grad log u), F(grad(-log u))} over cells of B_{delta R}.

    The logarithmic gradient on a cell is du divided by the smallest vertex
    value. The constant C in the shape e^{C(1+sqrt K)}(1+K)^{n+4k} is recorded
    in ``details`` with K = max(0, -certified K).
    """
    _check_ball(space, ball)
    u = np.asarray(u, float)
    _require_positive(u)
    mesh = ball.mesh
    du = mesh.cell_gradients(u)
    scale = max(1.0, float(np.max(np.abs(u))))
    flat = np.linalg.norm(du, axis=1) <= 1e-12 * scale / max(mesh.h, 1e-300)
    constant = bool(np.all(flat))
    if not constant and flat.mean() > 0.10:
        raise InsufficientRegularity(f"du vanishes on {flat.mean():.0%} of cells")
    sel = ball.cell_mask(delta)
    umin = u[mesh.cells].min(axis=1)
    H, bs = _problem(ball).coef
    xi = du / umin[:, None]
    G = np.maximum(form_norm(H, bs, xi), form_norm(H, bs, -xi))
    G = np.where(flat, 0.0, G)
    Gmax = float(G[sel].max())
    K = max(0.0, -space.certified.K)
    k = (space.certified.k or 0.0) if k is None else k
    base = (1 + K) ** (space.n + 4 * k)
    C = (math.log(Gmax) - math.log(base)) / (1 + math.sqrt(K)) if Gmax > 0 else None
    details = {"K": K, "k": k, "shape_base": base, "C": C, "flat_cell_fraction": float(flat.mean())}
    return _report(
        "gradient_estimate",
        space,
        _params(ball, delta=delta, k=k),
        lhs=Gmax,
        rhs=base,
        status="measured",
        measured=Gmax,
        details=details,
    )


# --------------------------------------------------------------------------
# Bochner-Weitzenbock identity on closed-form functions
# --------------------------------------------------------------------------


@dataclass
class ClosedForm:
    """A closed-form scalar function with symbolic derivatives (sympy)."""

    expr: str
    n: int = 2
    _fns: dict = field(default=None, repr=False)

    def _compile(self):
        if self._fns is None:
            import sympy as sp

            xs = sp.symbols(f"x1:{self.n + 1}")
            e = sp.sympify(self.expr, locals={f"x{i + 1}": xs[i] for i in range(self.n)})
            grad = [sp.diff(e, x) for x in xs]
            hess = [[sp.diff(g, x) for x in xs] for g in grad]
            third = [[[sp.diff(hij, x) for x in xs] for hij in row] for row in hess]
            self._fns = {
                "grad": sp.lambdify(xs, grad, "numpy"),
                "hess": sp.lambdify(xs, hess, "numpy"),
                "third": sp.lambdify(xs, third, "numpy"),
            }
        return self._fns

    def _eval(self, key, x):
        x = np.atleast_2d(np.asarray(x, float))
        out = self._compile()[key](*x.T)
        return np.moveaxis(_stack(out, len(x)), -1, 0)

    def grad(self, x):
        return self._eval("grad", x)

    def hess(self, x):
        return self._eval("hess", x)

    def third(self, x):
        return self._eval("third", x)


def _stack(obj, m):
    """Nested lists of scalars or (m,) arrays to an array of shape (..., m)."""
    if isinstance(obj, (list, tuple)):
        return np.stack([_stack(o, m) for o in obj])
    return np.broadcast_to(np.asarray(obj, float), (m,))


def bochner_terms(space: MeasureSpace, u: ClosedForm, points) -> dict:
    """The four terms of the weighted Bochner identity for constant A with a weight.

    With w = (1/2) du A^{-1} du and Delta_Phi f = tr(A^{-1} D^2 f) + (A^{-1}dPhi)(df):
    lhs = Delta_Phi w, terms d(Delta_Phi u)(grad u), Ric_inf(grad u) = -D^2Phi(grad u, grad u)
    and |D^2 u|^2_HS = tr(A^{-1} D^2u A^{-1} D^2u).
    """
    metric = space.metric
    if not metric.is_riemannian or not metric.is_constant:
        raise UnsupportedSpace("Bochner residual needs a constant Riemannian metric with a weight")
    P = np.atleast_2d(np.asarray(points, float))
    A, _ = metric.coefficients(P[0])
    Ai = np.linalg.inv(A)
    g, Hs, T = u.grad(P), u.hess(P), u.third(P)
    dPhi, D2Phi = space.log_density.grad(P), space.log_density.hess(P)
    Vg = g @ Ai  # grad u = A^{-1} du
    # w = (1/2) g A^{-1} g; Dw = D2u A^{-1} g; D2w = T[A^{-1}g] + D2u A^{-1} D2u
    Dw = np.einsum("mij,mj->mi", Hs, Vg)
    D2w = np.einsum("mijk,mk->mij", T, Vg) + np.einsum("mik,kl,mlj->mij", Hs, Ai, Hs)
    lap_w = np.einsum("ij,mij->m", Ai, D2w) + np.einsum("mi,ij,mj->m", dPhi, Ai, Dw)
    # Delta u = tr(A^{-1}D2u) + (A^{-1} dPhi)(du); its differential
    d_lap = np.einsum("ij,mijk->mk", Ai, T) + np.einsum("mki,ij,mj->mk", D2Phi, Ai, g) + np.einsum("mi,ij,mjk->mk", dPhi, Ai, Hs)
    term_dlap = np.einsum("mk,mk->m", d_lap, Vg)
    ric = -np.einsum("mij,mi,mj->m", D2Phi, Vg, Vg)
    hs = np.einsum("ij,mjk,kl,mli->m", Ai, Hs, Ai, Hs)
    return {"lhs": lap_w, "d_laplacian": term_dlap, "ric_inf": ric, "hessian_hs": hs}


def bochner_residual(space: MeasureSpace, u: ClosedForm | str, points) -> float:
    """max |Delta(F^2(grad u)/2) - d(Delta u)(grad u) - Ric_inf(grad u) - |D^2u|^2_HS| at the points."""
    if isinstance(u, str):
        u = ClosedForm(u, space.n)
    t = bochner_terms(space, u, points)
    return float(np.max(np.abs(t["lhs"] - t["d_laplacian"] - t["ric_inf"] - t["hessian_hs"])))


# --------------------------------------------------------------------------
# large-scale probes (need Ric_inf >= 0)
# --------------------------------------------------------------------------


def _refuse_negative(space: MeasureSpace, what: str) -> None:
    if space.certified.K < 0:
        raise HypothesisRefused(f"{what} needs certified Ric_inf >= 0; {space.name!r} only has Ric_inf >= {space.certified.K}")


def liouville_probe(
    space: MeasureSpace, radii=(1.0, 2.0, 4.0), x0=(0.0, 0.0), rings: int = 24, profile: str = "sine", slack: float = 0.10
) -> InequalityReport:
    """sup_{B_{R/4}} F(grad u) * R for harmonic u with boundary data 1 + sin(pi x1 / R) / R.

    Passes when the scaled gradient stays within ``slack`` of its value at the
    first radius, i.e. sup F(grad u) decays like 1/R.
    """
    _refuse_negative(space, "liouville_probe")
    x0 = np.asarray(x0, float)
    vals, sups = [], []
    for R in radii:
        ball = ball_mesh(space, x0, R, rings)
        if profile == "sine":
            data = 1 + np.sin(np.pi * (ball.mesh.nodes[:, 0] - x0[0]) / R) / R
            u = harmonic_on(ball, lambda q, d=data: d)
        elif profile == "const":
            u = np.full(ball.mesh.n_nodes, 1.0)
        else:
            raise ValueError(f"unknown profile {profile!r}")
        sel = ball.cell_mask(0.25)
        H, bs = _problem(ball).coef
        Fgrad = form_norm(H, bs, ball.mesh.cell_gradients(u))
        s = float(Fgrad[sel].max())
        sups.append(s)
        vals.append(s * R)
    lhs, rhs = max(vals), (1 + slack) * vals[0]
    return _report(
        "liouville",
        space,
        {"radii": list(radii), "x0": list(x0), "rings": rings, "profile": profile},
        lhs=lhs,
        rhs=rhs,
        status="pass" if lhs <= rhs + 1e-12 else "fail",
        measured=vals[0],
        details={"sup_grad": sups, "scaled": vals},
    )


def global_harnack_probe(
    space: MeasureSpace,
    radii=(1.0, 2.0, 4.0),
    delta: float = 0.5,
    x0=(0.0, 0.0),
    rings: int = 24,
    profile: str = "affine",
    slack: float = 0.10,
) -> InequalityReport:
    """Harnack ratios on B_{delta R_j} stay within ``slack`` of the first one.

    ``profile``: "affine" uses u = x1 + R + max|x1| on the ball (harmonic for
    unweighted constant metrics; u = x1 + 2R on a Euclidean ball), "solve" the harmonic extension of 2 + x1/R, "const" u = 1.
    """
    _refuse_negative(space, "global_harnack_probe")
    x0 = np.asarray(x0, float)
    ratios = []
    for R in radii:
        ball = ball_mesh(space, x0, R, rings)
        x1 = ball.mesh.nodes[:, 0] - x0[0]
        if profile == "affine":
            # shift so that the extremes on B_R sit at R and 3R in the flat case
            u = x1 + R + np.max(np.abs(x1))
        elif profile == "solve":
            u = harmonic_on(ball, lambda q, d=2 + x1 / R: d)
        elif profile == "const":
            u = np.ones(ball.mesh.n_nodes)
        else:
            raise ValueError(f"unknown profile {profile!r}")
        _require_positive(u)
        ratios.append(ball.sup(u, delta) / ball.inf(u, delta))
    lhs, rhs = max(ratios), (1 + slack) * ratios[0]
    return _report(
        "global_harnack",
        space,
        {"radii": list(radii), "x0": list(x0), "rings": rings, "profile": profile, "delta": delta},
        lhs=lhs,
        rhs=rhs,
        status="pass" if lhs <= rhs + 1e-12 else "fail",
        measured=ratios[0],
        details={"ratios": ratios},
    )


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

PROBES = ("poincare", "sobolev", "mean_value", "moser", "harnack", "superharmonic", "weak_l1", "gradient", "bochner", "liouville", "global_harnack")
BOCHNER_CASES = {"flat": ("(x1**2 - x2**2)/2", "x1**3", "x1**2*x2 + x2**4/12"), "gaussian": ("x1", "x1**2 + x1*x2")}


def run_suite(space: MeasureSpace, cfg: ExperimentConfig, probes=None) -> list[InequalityReport]:
    """Run the requested probes on one space; probes default to every applicable one."""
    explicit = probes is not None
    probes = tuple(PROBES if probes is None else probes)
    unknown = set(probes) - set(PROBES)
    if unknown:
        raise ValueError(f"unknown probes {sorted(unknown)}")
    needs_cap = {"poincare", "sobolev", "mean_value", "moser", "harnack", "superharmonic", "weak_l1", "gradient"}
    if needs_cap & set(probes):
        cfg.check_caps(space)
    out: list[InequalityReport] = []
    K, k, _ = cfg.constants(space)
    ball = _ball_with(space, cfg)
    # a positive harmonic test function: extension of 2 + x1 in unit-disk coordinates
    u = harmonic_on(ball, lambda q: 2 + q[:, 0])
    family = trial_family(ball, cfg.seed) if {"poincare", "sobolev"} & set(probes) else None

    if "poincare" in probes:
        out.append(poincare_quotient(space, ball, family=family))
        if space.name == "flat":
            Qs = []
            for r in (0.25, 0.5, 1.0):
                b = _ball_with(space, cfg, R=r * cfg.R)
                Qs.append(poincare_quotient(space, b, family=trial_family(b, cfg.seed)).measured)
            spread = max(Qs) / min(Qs) - 1
            out.append(
                InequalityReport.shape(
                    "poincare.r2_scaling", spread <= 0.05, spread, 0.05, space=space.name,
                    params=_params(ball, scales=[0.25, 0.5, 1.0]), details={"Q_over_R2": Qs},
                )
            )
    if "sobolev" in probes:
        out.append(sobolev_quotient(space, ball, k=k, family=family))
    if "mean_value" in probes:
        out.append(mean_value_check(space, ball, u, None, cfg.p, cfg.delta, k=k))
        out.append(mean_value_monotonicity(space, ball, u, None, cfg.p))
    if "moser" in probes:
        mball = ball if ball.rings % 32 == 0 else _ball_with(space, cfg, rings=32)
        um = u if mball is ball else harmonic_on(mball, lambda q: 2 + q[:, 0])
        out.append(moser_chain_check(space, mball, um, cfg.a, cfg.delta, cfg.delta2, k=k, seed=cfg.seed))
    if "harnack" in probes:
        out.append(harnack_check(space, ball, u, cfg.delta, K=K))
        out.append(harnack_monotonicity(space, ball, u))
    if "superharmonic" in probes:
        out.append(superharmonic_inf_check(space, ball, u, cfg.delta))
    if "weak_l1" in probes:
        out.append(weak_l1_log_check(space, ball, u, cfg.delta, cfg.delta2))
    if "gradient" in probes:
        out.append(gradient_estimate_check(space, ball, u, cfg.delta, k=k))
        w = harmonic_on(ball, lambda q: q[:, 0] ** 2 - q[:, 1] ** 2)
        out.append(lemma_subsolution_test(space, ball, w))
    if "bochner" in probes:
        cases = BOCHNER_CASES.get(space.name)
        if cases is None:
            if explicit:
                raise UnsupportedSpace(f"no closed-form Bochner cases for space {space.name!r}")
        else:
            pts = np.random.default_rng(cfg.seed).uniform(-1, 1, size=(16, space.n)) * cfg.R
            for expr in cases:
                res = bochner_residual(space, expr, pts)
                out.append(
                    InequalityReport.compare(
                        "bochner", res, 1e-8, rel=False, space=space.name, params={"u": expr, "points": 16, "seed": cfg.seed}
                    )
                )
    if "liouville" in probes and (explicit or space.certified.K >= 0):
        out.append(liouville_probe(space, x0=cfg.x0, rings=cfg.rings))
    if "global_harnack" in probes and (explicit or space.certified.K >= 0):
        affine = space.metric.is_constant and type(space.log_density).__name__ == "Lebesgue"
        out.append(global_harnack_probe(space, delta=cfg.delta, x0=cfg.x0, rings=cfg.rings, profile="affine" if affine else "solve"))
    return out

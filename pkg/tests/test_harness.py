import math

import numpy as np
import pytest

from finsler_lab.errors import (
    DomainError,
    HypothesisRefused,
    InsufficientRegularity,
    NonPositive,
    PreconditionFailed,
    UnsupportedSpace,
)
from finsler_lab.harness import (
    ExperimentConfig,
    bochner_residual,
    global_harnack_probe,
    gradient_estimate_check,
    harmonic_on,
    harnack_check,
    harnack_monotonicity,
    lemma_subsolution_test,
    liouville_probe,
    mean_value_check,
    mean_value_monotonicity,
    moser_chain_check,
    moser_schedule,
    nu_for,
    poincare_quotient,
    radius_cap,
    rayleigh_quotient,
    run_suite,
    sobolev_quotient,
    superharmonic_inf_check,
    trial_family,
    weak_l1_log_check,
)
from finsler_lab.mesh import ball_mesh
from finsler_lab.spaces import flat_space, gaussian_space, hyperbolic_space, randers_space

FLAT = flat_space()


@pytest.fixture(scope="module")
def fball():
    return ball_mesh(FLAT, R=1.0, rings=24)


def affine(ball):
    return ball.mesh.nodes[:, 0] + 2.0


def test_nu_and_caps():
    assert nu_for(2, 1) == 22 and 2 * 22 / 20 == pytest.approx(2.2)
    assert radius_cap(2, 1.0) == pytest.approx(math.pi / 4)
    assert radius_cap(2, 0.0) == math.inf
    with pytest.raises(DomainError):
        ExperimentConfig("gaussian", R=1.0).check_caps(gaussian_space())
    ExperimentConfig("gaussian", R=0.75).check_caps(gaussian_space())
    for bad in (dict(delta=0.6, delta2=0.5), dict(p=2.5), dict(a=0.5), dict(R=-1.0)):
        with pytest.raises(ValueError):
            ExperimentConfig("flat", **bad)


def test_poincare_flat_disk_and_scaling(fball):
    r1 = poincare_quotient(FLAT, fball)
    assert r1.status == "measured" and r1.passed is None
    assert abs(r1.measured / 0.295 - 1) <= 0.05
    half = ball_mesh(FLAT, R=0.5, rings=24)
    r2 = poincare_quotient(FLAT, half)
    # the report divides by R^2, so equal values mean exact quarter scaling
    assert abs(r2.measured / r1.measured - 1) <= 0.05
    quarter = ball_mesh(FLAT, R=0.25, rings=24)
    assert abs(poincare_quotient(FLAT, quarter).measured / r1.measured - 1) <= 0.05


def test_constant_excluded(fball):
    assert rayleigh_quotient(fball, np.full(fball.mesh.n_nodes, 3.0)) is None
    fam = [("const", np.ones(fball.mesh.n_nodes))] + trial_family(fball)[:3]
    r = poincare_quotient(FLAT, fball, ascent=False, family=fam)
    assert r.details["excluded_constant"] == 1


def test_trial_family_is_deterministic(fball):
    a, b = trial_family(fball), trial_family(fball)
    assert len(a) == 40
    assert all(n1 == n2 and np.array_equal(u1, u2) for (n1, u1), (n2, u2) in zip(a, b))


def test_sobolev(fball):
    r = sobolev_quotient(FLAT, fball, k=1.0)
    assert r.details["nu"] == 22 and r.details["exponent"] == pytest.approx(2.2)
    assert r.details["constant_variant_ratio"] == pytest.approx(1.0, abs=1e-12)
    fine = ball_mesh(FLAT, R=1.0, rings=48)
    hat = lambda b: np.clip(1 - np.linalg.norm(b.mesh.nodes - [0.2, 0.1], axis=1) / 0.5, 0, None)
    q1 = sobolev_quotient(FLAT, fball, k=1.0, family=[("hat", hat(fball))]).measured
    q2 = sobolev_quotient(FLAT, fine, k=1.0, family=[("hat", hat(fine))]).measured
    assert abs(q2 / q1 - 1) <= 0.05


def test_mean_value(fball):
    n = fball.mesh.n_nodes
    r = mean_value_check(FLAT, fball, np.ones(n), p=2, delta=0.5)
    assert r.measured == pytest.approx(1.0, abs=1e-12)
    u = affine(fball)
    r = mean_value_check(FLAT, fball, u, p=2, delta=0.5)
    assert r.lhs == pytest.approx(6.25)
    assert math.isfinite(r.measured) and r.status == "measured"
    assert mean_value_monotonicity(FLAT, fball, u).passed
    with pytest.raises(PreconditionFailed):
        mean_value_check(FLAT, fball, 4 - np.sum(fball.mesh.nodes**2, axis=1), p=2)


def test_mean_value_randers_within_twice_flat():
    g = lambda q: 1 + 0.5 * np.sin(math.pi * q[:, 0])
    fb = ball_mesh(FLAT, R=1.0, rings=24)
    rs = randers_space()
    rb = ball_mesh(rs, R=1.0, rings=24)
    cf = mean_value_check(FLAT, fb, harmonic_on(fb, g)).measured
    cr = mean_value_check(rs, rb, harmonic_on(rb, g)).measured
    assert cr <= 2 * cf and cf <= 2 * cr


def test_moser_schedule():
    s = moser_schedule(0.5, 4)
    assert s[0] == 1 and s == sorted(s, reverse=True) and all(d > 0.5 for d in s)


def test_moser_chain(fball):
    n = fball.mesh.n_nodes
    assert moser_chain_check(FLAT, fball, np.ones(n)).passed
    assert moser_chain_check(FLAT, fball, affine(fball)).passed
    u = harmonic_on(fball, lambda q: 2 + np.sin(math.pi * q[:, 0]))
    r = moser_chain_check(FLAT, fball, u)
    assert r.passed and r.details["final_bound_dominates_sup2"]
    assert len(r.details["steps"]) >= 4 and all(np.isfinite(r.details["norms"]))


def test_harnack(fball):
    r = harnack_check(FLAT, fball, affine(fball), delta=0.5)
    assert abs(r.measured - 5 / 3) <= 1e-6
    assert r.details["scale_invariance_error"] <= 1e-10
    assert harnack_check(FLAT, fball, np.full(fball.mesh.n_nodes, 7.0)).measured == 1
    with pytest.raises(NonPositive):
        harnack_check(FLAT, fball, fball.mesh.nodes[:, 0])
    hy = hyperbolic_space()
    hb = ball_mesh(hy, R=1.0, rings=24)
    assert harnack_monotonicity(hy, hb, harmonic_on(hb, lambda q: 2 + q[:, 0])).passed


def test_superharmonic_inf(fball):
    n = fball.mesh.n_nodes
    assert superharmonic_inf_check(FLAT, fball, np.ones(n)).measured == pytest.approx(1.0, abs=1e-12)
    u = 4 - np.sum(fball.mesh.nodes**2, axis=1)
    r = superharmonic_inf_check(FLAT, fball, u, delta=0.5)
    # min of u over the closed ball of radius 1/2 is 4 - 1/4
    assert r.lhs == pytest.approx(1 / 3.75)
    h = harmonic_on(fball, lambda q: 2 + q[:, 0])
    c = superharmonic_inf_check(FLAT, fball, h).measured
    # inf u >= avg(u^-1)^-1 / C: consistent with the Harnack lower bound
    assert 1 / fball.inf(h, 0.5) <= c * fball.average(1 / h) * (1 + 1e-12)
    with pytest.raises(PreconditionFailed):
        superharmonic_inf_check(FLAT, fball, 1 + np.sum(fball.mesh.nodes**2, axis=1))


def test_weak_l1(fball):
    n = fball.mesh.n_nodes
    r = weak_l1_log_check(FLAT, fball, np.full(n, 2.0))
    assert r.passed and r.details["chain"] == [0.0] * 5
    assert weak_l1_log_check(FLAT, fball, affine(fball)).passed
    rs = randers_space()
    rb = ball_mesh(rs, R=1.0, rings=24)
    r = weak_l1_log_check(rs, rb, harmonic_on(rb, lambda q: 2 + np.sin(math.pi * q[:, 0])))
    assert r.passed and r.details["Lambda"] == pytest.approx(3.0, rel=1e-6)
    with pytest.raises(NonPositive):
        weak_l1_log_check(FLAT, fball, fball.mesh.nodes[:, 0])


def test_gradient_estimate(fball):
    n = fball.mesh.n_nodes
    assert gradient_estimate_check(FLAT, fball, np.full(n, 3.0)).measured == 0
    r = gradient_estimate_check(FLAT, fball, affine(fball), delta=0.5)
    assert abs(r.measured - 1 / 1.5) <= 2e-2
    step = np.where(fball.mesh.node_dist < 0.9, 1.0, 1.0 + fball.mesh.nodes[:, 0] ** 2)
    with pytest.raises(InsufficientRegularity):
        gradient_estimate_check(FLAT, fball, step)


def test_lemma_subsolution_re_z2():
    b = ball_mesh(FLAT, R=1.0, rings=32)
    u = harmonic_on(b, lambda q: q[:, 0] ** 2 - q[:, 1] ** 2)
    assert lemma_subsolution_test(FLAT, b, u, K=0.0).passed


def test_bochner():
    pts = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    for expr in ("0.5*(x1**2 - x2**2)", "x1**3", "x1**2 + x1*x2"):
        assert bochner_residual(FLAT, expr, pts) <= 1e-8
    assert bochner_residual(gaussian_space(), "x1", pts) <= 1e-8
    with pytest.raises(UnsupportedSpace):
        bochner_residual(randers_space(), "x1", pts)


def test_liouville_and_global_harnack():
    r = liouville_probe(FLAT, profile="const")
    assert r.passed and max(r.details["scaled"]) <= 1e-12
    assert liouville_probe(FLAT).passed
    assert liouville_probe(gaussian_space(), radii=(0.25, 0.5, 0.75)).passed
    with pytest.raises(HypothesisRefused):
        liouville_probe(hyperbolic_space())
    r = global_harnack_probe(FLAT)
    assert r.passed
    assert global_harnack_probe(FLAT, profile="const").passed
    with pytest.raises(HypothesisRefused):
        global_harnack_probe(hyperbolic_space())


def test_run_suite_flat():
    reps = run_suite(FLAT, ExperimentConfig("flat"))
    assert reps and all(r.status in ("pass", "measured") for r in reps)
    for r in reps:
        if r.status == "pass":
            assert r.margin is None or r.margin >= -max(1e-8, abs(r.rhs or 0) * 1e-6)
        else:
            assert r.passed is None

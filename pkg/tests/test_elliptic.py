import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finsler_lab.elliptic import (
    DirichletProblem,
    check_subsolution,
    dirichlet_energy,
    energy_gradient,
    linear_solve,
    maximum_principle_check,
    solve_harmonic,
    weak_residual,
)
from finsler_lab.mesh import DiscreteFunction, annulus_mesh, disk_mesh, rectangle_mesh
from finsler_lab.spaces import flat_space, gaussian_space, hyperbolic_space, randers_space

SQ = rectangle_mesh(h=1 / 16)


def x1(x):
    return x[:, 0]


def re_z2(x):
    return x[:, 0] ** 2 - x[:, 1] ** 2


def test_energy_examples():
    p = DirichletProblem(flat_space(), SQ, x1)
    assert dirichlet_energy(p, np.full(SQ.n_nodes, 3.0)) == 0
    assert abs(dirichlet_energy(p, x1(SQ.nodes)) - 0.5) <= 1e-10
    pr = DirichletProblem(randers_space(), SQ, x1)
    assert abs(dirichlet_energy(pr, x1(SQ.nodes)) - 2 / 9) <= 1e-8


@pytest.mark.parametrize("space", [flat_space(), randers_space()], ids=["flat", "randers"])
@pytest.mark.parametrize("method", ["newton", "ncg"])
def test_affine_reproduction(space, method):
    p = DirichletProblem(space, SQ, lambda x: 0.3 + x[:, 0] - 0.7 * x[:, 1])
    u = solve_harmonic(p, method=method)
    assert np.max(np.abs(u.values - p.boundary)) <= 1e-8
    assert weak_residual(p, u) <= 1e-8


def _re_z2_error(rings):
    m = disk_mesh(1.0, rings)
    u = solve_harmonic(DirichletProblem(flat_space(), m, re_z2))
    return np.max(np.abs(u.values - re_z2(m.nodes)))


def test_re_z2_order():
    e1, e2 = _re_z2_error(16), _re_z2_error(32)
    assert math.log2(e1 / e2) >= 1.8


def test_weak_residual_examples():
    p = DirichletProblem(randers_space(), SQ, lambda x: np.sin(math.pi * x[:, 0]))
    before = weak_residual(p, linear_solve(DirichletProblem(flat_space(), SQ, p.boundary)))
    u = solve_harmonic(p)
    after = weak_residual(p, u)
    assert after <= 1e-8 < before
    z = DirichletProblem(flat_space(), SQ, np.zeros(SQ.n_nodes))
    assert weak_residual(z, np.zeros(SQ.n_nodes)) == 0


@pytest.mark.parametrize("space", [flat_space(), randers_space(), gaussian_space()], ids=["flat", "randers", "gaussian"])
def test_maximum_principle(space):
    p = DirichletProblem(space, SQ, lambda x: np.sin(math.pi * x[:, 0]) + x[:, 1] ** 2)
    u = solve_harmonic(p)
    assert maximum_principle_check(p, u).passed
    assert check_subsolution(p, u, tol=1e-8).passed
    assert check_subsolution(p, u, orientation="super", tol=1e-8).passed


def test_maximum_principle_trivial():
    p = DirichletProblem(flat_space(), SQ, x1)
    r = maximum_principle_check(p, x1(SQ.nodes))
    assert r.passed and r.lhs < 1 == r.rhs
    r = maximum_principle_check(p, np.full(SQ.n_nodes, 2.0))
    assert r.passed and r.margin == 0


def test_super_and_sub_solution_oracles():
    d = disk_mesh(1.0, 16)
    u = 4 - d.nodes[:, 0] ** 2 - d.nodes[:, 1] ** 2
    p = DirichletProblem(flat_space(), d, u)
    assert check_subsolution(p, u, f=0.0, orientation="super").passed
    assert not check_subsolution(p, u, f=0.0, orientation="sub").passed
    a = annulus_mesh(0.5, 1.0, h=1 / 16)
    v = a.nodes[:, 0] ** 2 + a.nodes[:, 1] ** 2
    q = DirichletProblem(flat_space(), a, v)
    assert check_subsolution(q, v, f=4 / v.min(), orientation="super").passed
    assert not check_subsolution(q, v, f=0.0, orientation="super").passed


def test_hyperbolic_solve_matches_linear():
    d = disk_mesh(0.8, 16)
    p = DirichletProblem(hyperbolic_space(), d, lambda x: np.cos(2 * x[:, 0]) + x[:, 1])
    assert np.max(np.abs(solve_harmonic(p).values - linear_solve(p).values)) <= 1e-8


def test_scale_equivariance():
    g = lambda x: np.sin(math.pi * x[:, 0]) + 0.5 * x[:, 1]
    base = DirichletProblem(randers_space(), SQ, g)
    u = solve_harmonic(base).values
    for lam in (0.5, 3.0):
        v = solve_harmonic(DirichletProblem(randers_space(), SQ, lam * base.boundary)).values
        assert np.max(np.abs(v - lam * u)) <= 1e-8 * lam
    w = solve_harmonic(DirichletProblem(randers_space(), SQ, -base.boundary)).values
    assert np.max(np.abs(w + u)) > 1e-3


rng_vals = st.integers(0, 2**31 - 1)


@given(rng_vals)
def test_energy_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    m = rectangle_mesh(h=1 / 6)
    p = DirichletProblem(randers_space(), m, x1)
    u = rng.normal(size=m.n_nodes)
    g = energy_gradient(p, u)
    i = int(rng.integers(m.n_nodes))
    e = np.zeros(m.n_nodes)
    e[i] = 1e-6
    fd = (dirichlet_energy(p, u + e) - dirichlet_energy(p, u - e)) / 2e-6
    assert abs(fd - g[i]) <= 1e-5 * max(1.0, float(np.max(np.abs(g))))


@given(rng_vals, st.floats(0.01, 0.99))
def test_energy_convexity(seed, lam):
    rng = np.random.default_rng(seed)
    m = rectangle_mesh(h=1 / 6)
    p = DirichletProblem(randers_space(), m, x1)
    u, w = rng.normal(size=(2, m.n_nodes))
    lhs = dirichlet_energy(p, lam * u + (1 - lam) * w)
    assert lhs <= lam * dirichlet_energy(p, u) + (1 - lam) * dirichlet_energy(p, w) + 1e-10


def test_problem_validation():
    with pytest.raises(ValueError):
        DirichletProblem(flat_space(), SQ, np.zeros(3))
    bad = np.zeros(SQ.n_nodes)
    bad[np.flatnonzero(SQ.boundary)[0]] = np.inf
    with pytest.raises(ValueError):
        DirichletProblem(flat_space(), SQ, bad)
    with pytest.raises(ValueError):
        solve_harmonic(DirichletProblem(flat_space(), SQ, x1), method="sor")
    assert isinstance(solve_harmonic(DirichletProblem(flat_space(), SQ, x1)), DiscreteFunction)

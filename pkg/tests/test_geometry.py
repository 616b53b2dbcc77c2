import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finsler_lab.calculus import gradient_field, weak_divergence_residual
from finsler_lab.errors import ConfigError, ZeroVector
from finsler_lab.geodesics import distance, distance_field, geodesic_shoot, s_curvature, s_curvature_at
from finsler_lab.measure import CertifiedBounds, GaussianWeight, Lebesgue, MeasureSpace, distortion, distortion_at
from finsler_lab.mesh import DiscreteFunction, rectangle_mesh
from finsler_lab.metric import randers
from finsler_lab.minkowski import TangentVector, fundamental_tensor, legendre_inverse_map, norm
from finsler_lab.spaces import flat_space, gaussian_space, get_space, hyperbolic_space, randers_space, space_from_config


def test_distortion():
    assert distortion(flat_space(), TangentVector((0.3, 1.0), (1.0, 2.0))) == 0.0
    assert distortion(gaussian_space(), TangentVector((1.0, 0.0), (0.0, 1.0))) == pytest.approx(0.5, abs=1e-14)
    sp = randers_space()
    v = TangentVector((0.0, 0.0), (0.0, 1.0))
    oracle = 0.5 * np.log(np.linalg.det(fundamental_tensor(sp.metric, v)))
    assert abs(distortion(sp, v) - oracle) <= 1e-8
    with pytest.raises(ZeroVector):
        distortion(sp, TangentVector((0.0, 0.0), (0.0, 0.0)))


def test_geodesic_examples():
    p = geodesic_shoot(flat_space(), (0, 0), (1, 0), 2.0)
    assert np.allclose(p.endpoint, (2, 0), atol=1e-12)
    rd = randers_space()
    p = geodesic_shoot(rd, (0, 0), (0, 1), 1.5)
    assert np.max(np.abs(p.x[:, 0])) <= 1e-12
    # unit-speed diameter of the Poincare disk: |x(t)| = tanh(t/2)
    hy = hyperbolic_space()
    p = geodesic_shoot(hy, (0, 0), (0.5, 0), 1.0)
    assert abs(p.endpoint[0] - np.tanh(0.5)) <= 1e-5 and abs(p.endpoint[1]) <= 1e-12
    p = geodesic_shoot(hy, (0.2, -0.1), (0.3, 0.4), 1.0)
    s = p.speeds(hy.metric)
    assert np.max(np.abs(s - p.speed)) <= 1e-6 * p.speed


def test_s_curvature():
    assert abs(s_curvature(flat_space(), TangentVector((0.5, 0.5), (1.0, 0.0)))) <= 1e-12
    assert abs(s_curvature(gaussian_space(), TangentVector((1.0, 0.0), (1.0, 0.0))) - 1.0) <= 1e-5
    assert abs(s_curvature(hyperbolic_space(), TangentVector((0.2, 0.3), (1.0, -0.5)))) <= 1e-6
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (100, 2))
    th = rng.uniform(0, 2 * np.pi, 100)
    y = np.stack([np.cos(th), np.sin(th)], 1)
    S = s_curvature_at(gaussian_space(), x, y)
    assert np.max(np.abs(S - np.sum(x * y, axis=1))) <= 1e-5


def test_distance_examples():
    assert distance(flat_space(), (0, 0), (3, 4)) == pytest.approx(5.0, abs=1e-12)
    rd = randers_space()
    assert distance(rd, (0, 0), (1, 0)) == pytest.approx(1.5, abs=1e-12)
    assert distance(rd, (1, 0), (0, 0)) == pytest.approx(0.5, abs=1e-12)
    for sp in (flat_space(), hyperbolic_space(), rd):
        assert distance(sp, (0.1, 0.2), (0.1, 0.2)) == 0.0
    # hyperbolic distance from the origin is 2 artanh |x|
    assert abs(distance(hyperbolic_space(), (0, 0), (0.5, 0.3)) - 2 * np.arctanh(np.hypot(0.5, 0.3))) <= 1e-5


def test_shooting_never_beats_minimization():
    hy = hyperbolic_space()
    rng = np.random.default_rng(3)
    x0 = np.array([0.1, -0.2])
    th = rng.uniform(0, 2 * np.pi, 30)
    r = rng.uniform(0.2, 1.5, 30)
    ends = []
    for t, rr in zip(th, r):
        y = np.array([np.cos(t), np.sin(t)])
        y = rr * y / norm(hy.metric, x0, y)
        ends.append(geodesic_shoot(hy, x0, y, 1.0).endpoint)
    d = distance_field(hy, x0, np.array(ends))
    assert np.all(d <= r * (1 + 1e-6))


def test_gradient_field():
    mesh = rectangle_mesh(h=1 / 8)
    u = DiscreteFunction.interpolate(mesh, lambda x: x[:, 0])
    assert np.allclose(gradient_field(flat_space(), u), [1.0, 0.0], atol=1e-14)
    assert np.all(gradient_field(flat_space(), DiscreteFunction(np.full(mesh.n_nodes, 3.0), mesh)) == 0)
    rd = randers_space()
    V = gradient_field(rd, u)
    want = legendre_inverse_map(rd.metric, np.zeros(2), np.array([1.0, 0.0]))
    assert np.max(np.abs(V - want)) <= 1e-12
    assert np.max(np.abs(norm(rd.metric, mesh.centroids, V) - 2 / 3)) <= 1e-8


def test_reverse_metric_gradient():
    """F(grad(-u)) equals the reverse metric's norm of its own gradient of u."""
    mesh = rectangle_mesh(h=1 / 8)
    u = DiscreteFunction.interpolate(mesh, lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2)
    rd = randers_space()
    rev = MeasureSpace("rev", randers([[1, 0], [0, 1]], [-0.5, 0.0]), Lebesgue(), CertifiedBounds(0.0))
    lhs = norm(rd.metric, mesh.centroids, gradient_field(rd, DiscreteFunction(-u.values, mesh)))
    rhs = norm(rev.metric, mesh.centroids, gradient_field(rev, u))
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


def test_weak_divergence():
    mesh = rectangle_mesh(lo=(-1, -1), hi=(1, 1), h=1 / 16)
    phi = DiscreteFunction.interpolate(mesh, lambda x: np.maximum(0, 0.5 - np.abs(x).max(axis=1)))
    zero = np.zeros((mesh.n_cells, 2))
    assert weak_divergence_residual(flat_space(), zero, phi) == 0.0
    V = np.tile([1.0, 0.0], (mesh.n_cells, 1))
    assert abs(weak_divergence_residual(flat_space(), V, phi)) <= 1e-10
    g = gaussian_space()
    # int dphi(V) dm = -int phi V(Phi) dm; the residual is the quadrature error only
    assert abs(weak_divergence_residual(g, V, phi)) <= 1e-3 * mesh.integrate(g, mesh.at_quadrature(phi.values))


def test_space_config():
    assert get_space("hyperbolic").certified.K == -1.0
    with pytest.raises(ConfigError):
        get_space("nope")
    doc = gaussian_space().to_dict()
    sp = space_from_config(doc)
    assert sp.certified == gaussian_space().certified
    assert isinstance(sp.log_density, GaussianWeight)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0, 2 * np.pi))
def test_distortion_randers_translation_invariant(x1, x2, th):
    sp = randers_space()
    y = np.array([np.cos(th), np.sin(th)])
    assert abs(distortion_at(sp, np.array([x1, x2]), y) - distortion_at(sp, np.zeros(2), y)) <= 1e-14

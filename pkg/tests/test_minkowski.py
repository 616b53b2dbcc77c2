import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finsler_lab.errors import InvalidMetric, ZeroCovector, ZeroVector
from finsler_lab.metric import MetricDescriptor, randers
from finsler_lab.minkowski import (
    CotangentVector,
    TangentVector,
    cartan,
    cartan_tensor,
    dual,
    dual_norm,
    dual_tensor,
    eval_F,
    fundamental,
    fundamental_tensor,
    legendre,
    legendre_inverse,
    legendre_inverse_map,
    legendre_map,
    norm,
    reversibility_oracle_randers,
    uniformity_constants,
)

from conftest import circle_dual

O = (0.0, 0.0)


def tv(y):
    return TangentVector(O, tuple(y))


def cv(xi):
    return CotangentVector(O, tuple(xi))


def fd_hessian_half_sq(metric, y, h=1e-4):
    f = lambda v: 0.5 * eval_F(metric, tv(v)) ** 2
    y = np.asarray(y, float)
    H = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            H[i, j] = (f(y + ei + ej) - f(y + ei - ej) - f(y - ei + ej) + f(y - ei - ej)) / (4 * h * h)
    return H


def test_norm_values(flat2, rand05):
    assert eval_F(flat2, tv((3, 4))) == pytest.approx(5.0, abs=1e-14)
    assert eval_F(rand05, tv((1, 0))) == pytest.approx(1.5, abs=1e-14)
    assert eval_F(rand05, tv((-1, 0))) == pytest.approx(0.5, abs=1e-14)


def test_fundamental_tensor(flat2, diag14, rand05):
    assert np.allclose(fundamental_tensor(flat2, tv((0.3, -2))), np.eye(2))
    assert np.allclose(fundamental_tensor(diag14, tv((1, 1))), np.diag([1, 4]))
    g = fundamental_tensor(rand05, tv((0, 1)))
    assert np.max(np.abs(g - fd_hessian_half_sq(rand05, (0, 1)))) <= 1e-6


def test_cartan(flat2, diag14, rand05):
    assert np.all(cartan_tensor(flat2, tv((1, 1))) == 0)
    assert np.all(cartan_tensor(diag14, tv((1, 2))) == 0)
    y = np.array([0.0, 1.0])
    C = cartan_tensor(rand05, tv(y))
    assert np.max(np.abs(C @ y)) <= 1e-8
    # C_ijk = (1/2) d g_ij / dy^k
    h = 1e-4
    fd = np.stack([(fundamental_tensor(rand05, tv(y + h * e)) - fundamental_tensor(rand05, tv(y - h * e))) / (4 * h) for e in np.eye(2)], -1)
    assert np.max(np.abs(C - fd)) <= 1e-5


def test_dual_values(flat2, rand05):
    assert dual_norm(flat2, cv((3, 4))) == pytest.approx(5.0, abs=1e-12)
    A, b = np.eye(2), np.array([0.5, 0.0])
    for xi, want in (((1, 0), 2 / 3), ((-1, 0), 2.0)):
        got = dual_norm(rand05, cv(xi))
        assert abs(got - want) <= 1e-8
        assert abs(got - circle_dual(A, b, np.array(xi, float))) <= 1e-8


def test_legendre_examples(flat2, rand05):
    assert np.allclose(legendre(flat2, tv((3, 4))).xi, (3, 4))
    assert np.all(legendre(rand05, tv((0, 0))).xi == 0)
    assert abs(dual_norm(rand05, legendre(rand05, tv((0, 1)))) - 1.0) <= 1e-8
    assert np.allclose(legendre_inverse(flat2, cv((1, 2))).y, (1, 2))
    assert np.all(legendre_inverse(rand05, cv((0, 0))).y == 0)
    y = legendre_inverse(rand05, cv((1, 0)))
    assert abs(eval_F(rand05, y) - 2 / 3) <= 1e-8


def test_dual_tensor(flat2, diag14, rand05):
    assert np.allclose(dual_tensor(flat2, cv((1, 2))), np.eye(2))
    assert np.allclose(dual_tensor(diag14, cv((1, 2))), np.diag([1, 0.25]))
    uc = uniformity_constants(rand05)
    eta = np.random.default_rng(1).normal(size=(200, 2))
    gs = dual_tensor(rand05, cv((1, 1)))
    q = np.einsum("ij,mi,mj->m", gs, eta, eta)
    F2 = dual(rand05, np.zeros_like(eta), eta) ** 2
    assert np.all(q >= F2 / uc.kappa * (1 - 1e-6))
    assert np.all(q <= F2 / uc.kappa_star * (1 + 1e-6))


def test_uniformity_constants(flat2, rand05):
    uc = uniformity_constants(flat2)
    assert (uc.kappa, uc.kappa_star, uc.lambda_rev) == pytest.approx((1, 1, 1))
    uc = uniformity_constants(rand05)
    assert abs(uc.lambda_rev - reversibility_oracle_randers(0.5)) <= 1e-8
    assert uc.lambda_rev <= min(np.sqrt(uc.kappa), np.sqrt(1 / uc.kappa_star)) * (1 + 1e-9)


def test_errors(rand05):
    with pytest.raises(InvalidMetric):
        randers([[1, 0], [0, 1]], [1.2, 0])
    with pytest.raises(ZeroVector):
        fundamental_tensor(rand05, tv((0, 0)))
    with pytest.raises(ZeroCovector):
        dual_tensor(rand05, cv((0, 0)))
    with pytest.raises(InvalidMetric):
        MetricDescriptor.from_dict({"variant": "randers", "dimension": 2, "a": "identity", "b": [0.6, 0.9]})


def test_descriptor_roundtrip(rand05):
    again = MetricDescriptor.from_json(rand05.to_json())
    y = np.random.default_rng(0).normal(size=(20, 2))
    assert np.array_equal(norm(again, np.zeros_like(y), y), norm(rand05, np.zeros_like(y), y))


# -- properties ------------------------------------------------------------

randers_data = st.tuples(
    st.floats(0.0, 0.8),
    st.floats(0, 2 * np.pi),
    st.floats(0.3, 3.0),
    st.floats(0.3, 3.0),
    st.floats(-0.5, 0.5),
)


def _metric(data):
    r, th, a11, a22, a12 = data
    A = np.array([[a11, a12 * np.sqrt(a11 * a22)], [a12 * np.sqrt(a11 * a22), a22]])
    # |b|_a = r exactly
    u = np.array([np.cos(th), np.sin(th)])
    b = A @ u * r / np.sqrt(u @ A @ u)
    return randers(A.tolist(), b.tolist())


vec = st.tuples(st.floats(-5, 5), st.floats(-5, 5)).filter(lambda v: np.hypot(*v) > 1e-3)


@given(randers_data, vec, st.floats(1e-3, 10.0))
def test_homogeneity(data, y, lam):
    m = _metric(data)
    y = np.array(y)
    F = norm(m, np.zeros(2), y)
    assert abs(norm(m, np.zeros(2), lam * y) - lam * F) <= 1e-10 * lam * F


@given(randers_data, vec)
def test_fundamental_contracts_to_F2(data, y):
    m = _metric(data)
    y = np.array(y)
    g = fundamental(m, np.zeros(2), y)
    F = norm(m, np.zeros(2), y)
    assert abs(y @ g @ y - F * F) <= 1e-8 * F * F
    assert np.max(np.abs(cartan(m, np.zeros(2), y) @ y)) <= 1e-8 * max(1.0, np.abs(cartan(m, np.zeros(2), y)).max())


@given(randers_data, vec)
def test_legendre_roundtrip(data, y):
    m = _metric(data)
    y = np.array(y)
    xi = legendre_map(m, np.zeros(2), y)
    back = legendre_inverse_map(m, np.zeros(2), xi)
    assert np.linalg.norm(back - y) <= 1e-8 * np.linalg.norm(y)
    assert abs(dual(m, np.zeros(2), xi) - norm(m, np.zeros(2), y)) <= 1e-8 * norm(m, np.zeros(2), y)


@given(randers_data, vec)
def test_reversibility_bound(data, y):
    m = _metric(data)
    y = np.array(y)
    lam = reversibility_oracle_randers(float(m.b_norm(np.zeros(2))))
    assert norm(m, np.zeros(2), y) <= lam * norm(m, np.zeros(2), -y) * (1 + 1e-12)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxgal.entropy import (
    EXP_CLAMP,
    FermiDirac,
    Hellinger,
    Shannon,
    SignoriniLog,
    bregman_dual,
    grad_rstar,
    hess_rstar,
    inverse_check,
)
from proxgal.mesh import unit_square_mesh
from proxgal.quadrature import volume_points
from proxgal.spaces import FeFunction, build_space

X1 = np.array([[0.3, 0.4]])

SCALAR = {
    "shannon": Shannon(lambda x: -0.2 + 0.1 * x[:, 0]),
    "fermi_dirac": FermiDirac(-1.0, lambda x: 1.0 + x[:, 0]),
    "signorini_log": SignoriniLog(lambda x: 0.05 + x[:, 0]),
}

finite_psi = st.floats(-30, 30, allow_nan=False)
points = st.tuples(st.floats(0, 1), st.floats(0, 1))


# -- closed-form values -----------------------------------------------------------


@pytest.mark.parametrize(
    "ent, psi, expected",
    [
        (Shannon(0.0), 0.0, 1.0),
        (FermiDirac(-1.0, 1.0), 0.0, 0.0),
        (SignoriniLog(0.5), 0.0, -0.5),
    ],
)
def test_grad_values(ent, psi, expected):
    assert grad_rstar(ent, X1, np.array([psi]))[0] == pytest.approx(expected, abs=1e-15)


def test_hellinger_grad_zero():
    np.testing.assert_array_equal(Hellinger(2.0).grad(X1, np.zeros((1, 2))), 0.0)


@pytest.mark.parametrize(
    "ent, expected", [(Shannon(0.0), 1.0), (FermiDirac(-1.0, 1.0), 0.5), (SignoriniLog(1.0), 1.0)]
)
def test_hess_values(ent, expected):
    assert hess_rstar(ent, X1, np.zeros(1))[0] == pytest.approx(expected, rel=1e-15)


def test_hellinger_hess_identity():
    np.testing.assert_allclose(Hellinger(1.0).hess(X1, np.zeros((1, 2)))[0], np.eye(2), atol=1e-15)


@pytest.mark.parametrize(
    "ent, o",
    [(Shannon(0.0), 1.0), (FermiDirac(-1.0, 1.0), 0.0)],
)
def test_inverse_zero(ent, o):
    assert inverse_check(ent, X1, np.array([o]))[0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize(
    "ent, o",
    [(Shannon(0.0), 0.0), (Shannon(0.0), -1.0), (FermiDirac(-1.0, 1.0), 1.0), (SignoriniLog(0.5), 0.5)],
)
def test_inverse_rejects_boundary(ent, o):
    with pytest.raises(ValueError):
        inverse_check(ent, X1, np.array([o]))


def test_hellinger_inverse_rejects_outside():
    with pytest.raises(ValueError):
        inverse_check(Hellinger(1.0), X1, np.array([[0.6, 0.8]]))


def test_signorini_lift_sign():
    # the latent value of a zero observable is -log g for R*(psi) = exp(-psi) + g psi
    ent = SignoriniLog(0.25)
    assert ent.lift(X1)[0] == pytest.approx(-math.log(0.25), rel=1e-15)
    assert ent.grad(X1, ent.lift(X1))[0] == pytest.approx(0.0, abs=1e-15)


def test_shannon_lift():
    ent = Shannon(-0.3)
    assert ent.lift(X1)[0] == pytest.approx(math.log(0.3), rel=1e-15)


def test_rejects_non_finite():
    for ent in SCALAR.values():
        with pytest.raises(ValueError):
            ent.grad(X1, np.array([np.nan]))


def test_fermi_dirac_needs_ordered_bounds():
    with pytest.raises(ValueError):
        FermiDirac(1.0, -1.0).grad(X1, np.zeros(1))


# -- properties ----------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(SCALAR))
@given(x=points, psi=finite_psi)
def test_interior_mapping(name, x, psi):
    ent = SCALAR[name]
    xx = np.array([x])
    o = ent.grad(xx, np.array([psi]))
    assert ent.margin(xx, np.array([psi]))[0] > 0
    assert ent.hess(xx, np.array([psi]))[0] > 0
    if abs(psi) < 25:
        assert ent.interior(xx, o)[0]


@given(psi=st.lists(st.floats(-20, 20), min_size=2, max_size=2))
def test_hellinger_interior_and_spd(psi):
    ent = Hellinger(1.5)
    p = np.array([psi])
    assert np.linalg.norm(ent.grad(X1, p)) < 1.5
    assert np.linalg.eigvalsh(ent.hess(X1, p)[0]).min() > 0


@pytest.mark.parametrize("name", sorted(SCALAR))
@given(a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_monotone(name, a, b):
    ent = SCALAR[name]
    xx = np.array([[0.5, 0.5]])
    if abs(a - b) < 1e-6:
        return
    ga, gb = ent.grad(xx, np.array([a]))[0], ent.grad(xx, np.array([b]))[0]
    assert (ga - gb) * (a - b) > 0


@pytest.mark.parametrize("name", sorted(SCALAR))
def test_round_trip(name, rng):
    ent = SCALAR[name]
    x = rng.uniform(0, 1, (100, 2))
    psi = rng.uniform(-5, 5, 100)
    back = inverse_check(ent, x, ent.grad(x, psi))
    np.testing.assert_allclose(back, psi, atol=1e-10)


def test_round_trip_hellinger(rng):
    ent = Hellinger(1.5)
    psi = rng.uniform(-5, 5, (100, 2))
    np.testing.assert_allclose(inverse_check(ent, psi, ent.grad(psi, psi)), psi, atol=1e-10)


def _fd_errors(ent, x, psi, h=1e-5):
    g, H = ent.grad(x, psi), ent.hess(x, psi)
    fd_g = (ent.rstar(x, psi + h) - ent.rstar(x, psi - h)) / (2 * h)
    fd_h = (ent.grad(x, psi + h) - ent.grad(x, psi - h)) / (2 * h)
    return np.abs(fd_g - g) / (1 + np.abs(g)), np.abs(fd_h - H) / (1 + np.abs(H))


@pytest.mark.parametrize("name", sorted(SCALAR))
def test_finite_differences(name, rng):
    x = rng.uniform(0, 1, (100, 2))
    psi = rng.uniform(-3, 3, 100)
    eg, eh = _fd_errors(SCALAR[name], x, psi)
    assert eg.max() <= 1e-6 and eh.max() <= 1e-6


def test_finite_differences_hellinger(rng):
    ent, h = Hellinger(1.5), 1e-5
    psi = rng.uniform(-3, 3, (100, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd_g = (ent.rstar(X1, psi + e) - ent.rstar(X1, psi - e)) / (2 * h)
        fd_h = (ent.grad(X1, psi + e) - ent.grad(X1, psi - e)) / (2 * h)
        g, H = ent.grad(X1, psi)[:, i], ent.hess(X1, psi)[:, :, i]
        assert np.max(np.abs(fd_g - g) / (1 + np.abs(g))) <= 1e-6
        assert np.max(np.abs(fd_h - H) / (1 + np.abs(H))) <= 1e-6


@given(psi=st.floats(-50, 50))
def test_fermi_dirac_decomposition(psi):
    lo, hi = -0.7, 2.3
    ent = FermiDirac(lo, hi)
    # the logistic map written as a tanh-type fraction around the midpoint
    e = math.exp(psi)
    ref = (hi - lo) / 2 * (e - 1) / (e + 1) + (hi + lo) / 2
    assert ent.grad(X1, np.array([psi]))[0] == pytest.approx(ref, abs=1e-12)


# -- divergences -----------------------------------------------------------------------


def _random_functions(seed, n=3):
    mesh = unit_square_mesh(n)
    V = build_space(mesh, "P1", dirichlet=None)
    rng = np.random.default_rng(seed)
    return mesh, [FeFunction(V, rng.uniform(-2, 2, V.n_dofs)) for _ in range(3)]


@pytest.mark.parametrize("name", sorted(SCALAR))
@given(seed=st.integers(0, 2**31 - 1))
def test_three_point_identity(name, seed):
    ent = SCALAR[name]
    mesh, (a, b, c) = _random_functions(seed)
    qp = volume_points(mesh, 6)
    lhs = bregman_dual(ent, a, b, qp) - bregman_dual(ent, a, c, qp) + bregman_dual(ent, b, c, qp)
    va, vb, vc = (f.at(qp.cells, qp.bary) for f in (a, b, c))
    rhs = qp.integrate((ent.grad(qp.x, vb) - ent.grad(qp.x, vc)) * (vb - va))
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(rhs)))


@pytest.mark.parametrize("name", sorted(SCALAR))
@given(seed=st.integers(0, 2**31 - 1))
def test_dual_divergence_nonnegative(name, seed):
    ent = SCALAR[name]
    mesh, (a, b, _) = _random_functions(seed)
    qp = volume_points(mesh, 4)
    assert bregman_dual(ent, a, b, qp) >= -1e-12
    assert bregman_dual(ent, a, a, qp) == pytest.approx(0.0, abs=1e-14)


def test_linking_identity_shannon():
    # D*(grad R(v), grad R(u)) = D(u, v) with R(o) = o log o - o and phi = 0
    ent = Shannon(0.0)
    u, v = 2.0, 3.0
    lhs = ent.dual_divergence(X1, np.log([v]), np.log([u]))[0]
    rhs = u * math.log(u / v) - u + v
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_signorini_divergence_stable_for_large_latent():
    ent = SignoriniLog(0.1)
    eta, psi = np.array([600.0]), np.array([600.0 + 1e-9])
    assert ent.dual_divergence(X1, eta, psi)[0] >= 0


def test_clamping_is_reported():
    ent = Shannon(0.0)
    psi = np.array([EXP_CLAMP + 5.0, 0.0])
    np.testing.assert_array_equal(ent.clamped(np.zeros((2, 2)), psi), [True, False])
    assert np.all(np.isfinite(ent.grad(np.zeros((2, 2)), psi)))

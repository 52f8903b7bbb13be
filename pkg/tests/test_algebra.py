import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from proxgal.algebra import (
    FormSpec,
    SingularMatrixError,
    assemble,
    assemble_vector,
    equilibrate,
    read_coo,
    solve_direct,
    write_coo,
)
from proxgal.mesh import retag, unit_interval_mesh, unit_square_mesh
from proxgal.quadrature import volume_points
from proxgal.spaces import FeFunction, build_space, interpolate


def contact_mesh(n=4):
    return retag(unit_square_mesh(n), {"contact": lambda x: x[1] < 1e-12})


# -- assembly -----------------------------------------------------------------------


def test_stiffness_1d_hand_assembly():
    V = build_space(unit_interval_mesh(2), "P1", dirichlet=None)
    K = assemble(FormSpec("stiffness", V, V)).toarray()
    # two elements of size 1/2: local matrix (1/h) [[1, -1], [-1, 1]]
    np.testing.assert_allclose(K, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]], atol=1e-13)


@pytest.mark.parametrize("mesh", [unit_interval_mesh(5), unit_square_mesh(3)], ids=["1d", "2d"])
def test_mass_total_is_measure(mesh):
    V = build_space(mesh, "P1", dirichlet=None)
    M = assemble(FormSpec("mass", V, V))
    one = np.ones(V.n_dofs)
    assert one @ M @ one == pytest.approx(1.0, rel=1e-14)
    assert np.all(M.diagonal() >= 0)
    assert abs(M - M.T).max() <= 1e-14


@pytest.mark.parametrize("family", ["P1", "P1Bubble"])
def test_stiffness_symmetric_and_kernel(family):
    V = build_space(unit_square_mesh(3), family, dirichlet=None)
    K = assemble(FormSpec("stiffness", V, V))
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    const = interpolate(V, 1.0).coefficients
    np.testing.assert_allclose(K @ const, 0.0, atol=1e-12)


@pytest.mark.parametrize("family", ["P1", "P1Bubble"])
def test_stiffness_spd_after_constraints(family):
    V = build_space(unit_square_mesh(3), family)
    K = assemble(FormSpec("stiffness", V, V)).toarray()
    fr = V.free_dofs
    assert np.linalg.eigvalsh(K[np.ix_(fr, fr)]).min() > 0


def test_weighted_mass_unit_weight():
    V = build_space(unit_square_mesh(3), "P1Bubble", dirichlet=None)
    M = assemble(FormSpec("mass", V, V))
    Mw = assemble(FormSpec("weighted_mass", V, V, {"coefficient": 1.0}))
    assert abs(M - Mw).max() <= 1e-14
    Mf = assemble(FormSpec("weighted_mass", V, V, {"coefficient": interpolate(V, 1.0)}))
    assert abs(M - Mf).max() <= 1e-14


def test_galerkin_consistency():
    # K c reproduces int grad u . grad phi_i computed independently at the points
    V = build_space(unit_square_mesh(3), "P1", dirichlet=None)
    u = interpolate(V, lambda x: x[:, 0] ** 2 + x[:, 0] * x[:, 1])
    qp = volume_points(V.mesh, 2)
    gu = u.at(qp.cells, qp.bary, grad=True)
    G = V.tabulate(qp.cells, qp.bary, grad=True)
    direct = sum(D.T @ (qp.weights * gu[:, k]) for k, D in enumerate(G))
    K = assemble(FormSpec("stiffness", V, V))
    np.testing.assert_allclose(K @ u.coefficients, direct, atol=1e-13)


def test_elasticity_rigid_body_kernel():
    V = build_space(unit_square_mesh(3), "P1", 2, dirichlet=None)
    A = assemble(FormSpec("elasticity", V, V, {"lame": (1.3, 0.7)}))
    X = V.mesh.vertices
    motions = [
        np.column_stack([np.ones(len(X)), np.zeros(len(X))]),
        np.column_stack([np.zeros(len(X)), np.ones(len(X))]),
        np.column_stack([-X[:, 1], X[:, 0]]),
    ]
    for r in motions:
        c = r.ravel()
        assert abs(c @ A @ c) <= 1e-12
    assert abs(A - A.T).max() <= 1e-12


def test_elasticity_uniaxial_energy():
    # u = (x, 0): eps = diag(1, 0), C eps : eps = 2 mu + lambda
    lam, mu = 1.3, 0.7
    V = build_space(unit_square_mesh(2), "P1", 2, dirichlet=None)
    A = assemble(FormSpec("elasticity", V, V, {"lame": (lam, mu)}))
    X = V.mesh.vertices
    c = np.column_stack([X[:, 0], np.zeros(len(X))]).ravel()
    assert c @ A @ c == pytest.approx(2 * mu + lam, rel=1e-13)


def test_boundary_pairing_length():
    m = contact_mesh()
    V = build_space(m, "P1", 2, dirichlet=None)
    W = build_space(m, "P1", dirichlet=None)
    B = assemble(FormSpec("boundary_normal_pairing", V, W, {"tag": "contact"}))
    # v . n = 1 on the bottom edge: v = (0, -1)
    v = np.tile([0.0, -1.0], m.n_vertices)
    w = np.ones(W.n_dofs)
    assert B.shape == (W.n_dofs, V.n_dofs)
    assert w @ B @ v == pytest.approx(1.0, rel=1e-14)


def test_boundary_mass_length():
    m = contact_mesh()
    W = build_space(m, "P1", dirichlet=None)
    M = assemble(FormSpec("boundary_mass", W, W, {"tag": "contact"}))
    one = np.ones(W.n_dofs)
    assert one @ M @ one == pytest.approx(1.0, rel=1e-14)


def test_unknown_form():
    V = build_space(unit_square_mesh(2), "P1")
    with pytest.raises(ValueError):
        assemble(FormSpec("curl", V, V))


def test_mesh_mismatch():
    V = build_space(unit_square_mesh(2), "P1")
    W = build_space(unit_square_mesh(3), "P1")
    with pytest.raises(ValueError):
        assemble(FormSpec("mass", V, W))


@pytest.mark.parametrize("mesh", [unit_interval_mesh(4), unit_square_mesh(3)], ids=["1d", "2d"])
def test_load_vector_constant(mesh):
    V = build_space(mesh, "P1", dirichlet=None)
    assert assemble_vector(1.0, V).sum() == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_array_equal(assemble_vector(0.0, V), 0.0)


def test_load_vector_hat_times_x():
    V = build_space(unit_interval_mesh(2), "P1", dirichlet=None)
    b = assemble_vector(lambda x: x[:, 0], V)
    # int_0^1 x phi(x) with phi the hat at 0.5 is 0.25
    assert b[1] == pytest.approx(0.25, rel=1e-14)


# -- solver ---------------------------------------------------------------------------


def test_identity_system():
    b = np.arange(5.0)
    np.testing.assert_allclose(solve_direct(sp.identity(5, format="csc"), b), b)


def test_poisson_1d():
    m = unit_interval_mesh(64)
    V = build_space(m, "P1")
    K = assemble(FormSpec("stiffness", V, V))
    F = assemble_vector(1.0, V)
    fr = V.free_dofs
    u = np.zeros(V.n_dofs)
    u[fr] = solve_direct(K[fr][:, fr], F[fr])
    mid = int(np.argmin(np.abs(m.vertices[:, 0] - 0.5)))
    assert u[mid] == pytest.approx(0.125, abs=1e-3)
    # nodal exactness of 1D linear elements for -u'' = 1
    np.testing.assert_allclose(u, m.vertices[:, 0] * (1 - m.vertices[:, 0]) / 2, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(1, 8))
def test_saddle_against_dense(seed, n, k):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    A = G @ G.T + n * np.eye(n)
    H = rng.normal(size=(k, k))
    Mq = H @ H.T + k * np.eye(k)
    Bm = rng.normal(size=(n, k))
    J = np.block([[A, Bm], [Bm.T, -Mq]])
    b = rng.normal(size=n + k)
    x = solve_direct(sp.csc_matrix(J), b)
    np.testing.assert_allclose(x, sla.solve(J, b), rtol=1e-8, atol=1e-10)
    assert np.linalg.norm(J @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_singular_reports_pivot():
    A = sp.csc_matrix(np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 2.0]]))
    with pytest.raises(SingularMatrixError) as info:
        solve_direct(A, np.ones(3))
    assert info.value.pivot == 1


def test_structurally_deficient():
    A = sp.csc_matrix((3, 3))
    with pytest.raises(SingularMatrixError):
        solve_direct(A, np.ones(3))


@given(st.integers(0, 2**31 - 1))
def test_equilibration_unit_max(seed):
    rng = np.random.default_rng(seed)
    A = sp.random(20, 20, density=0.3, random_state=rng) + sp.identity(20)
    A = sp.csr_matrix(A.multiply(10.0 ** rng.uniform(-6, 6, (20, 1))))
    r, c = equilibrate(A, sweeps=20)
    S = abs(sp.diags(r) @ A @ sp.diags(c))
    np.testing.assert_allclose(S.max(axis=1).toarray().ravel(), 1.0, rtol=1e-3)


def test_coo_roundtrip(tmp_path):
    V = build_space(unit_square_mesh(2), "P1", dirichlet=None)
    K = assemble(FormSpec("stiffness", V, V))
    write_coo(K, tmp_path / "k.txt")
    back = read_coo(tmp_path / "k.txt", K.shape)
    assert abs(back - K).max() == 0.0

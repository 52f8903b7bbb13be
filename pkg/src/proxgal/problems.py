"""Obstacle and Signorini problem builders, reference solutions and error metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from . import algebra
from .algebra import FormSpec, assemble, assemble_vector, normal_trace, solve_direct
from .entropy import Shannon, SignoriniLog, sample
from .mesh import DIRICHLET, Mesh, check_local_symmetry, check_signorini_facets
from .quadrature import QuadraturePoints, boundary_points, composite_points, volume_points
from .spaces import FeFunction, FunctionSpace, build_space

log = logging.getLogger(__name__)

ASSEMBLY_DEGREE = 8


def default_degree(dim: int) -> int:
    return 6 if dim == 1 else 4


@dataclass(eq=False)
class ProblemSpec:
    """Discrete problem data consumed by the solver.

    Attributes
    ----------
    A, F : assembled form ``a`` and load ``F`` on the full ``V`` dofs
    qp : quadrature points of the observation domain (volume or contact boundary)
    BV : map from ``V`` coefficients to the observable at ``qp``
    PW : map from ``W`` coefficients to latent values at ``qp``
    psi_offset : fixed latent values at ``qp`` (boundary lift of boundary spaces)
    B : pairing matrix, ``b(v, w) = v^T B w``
    H1, M_V : H1-seminorm (or energy-type) and mass matrices on ``V``
    M_W : mass matrix of ``W`` on ``qp``
    lump_V, lump_W : integrals of the basis functions (residual scaling)
    """

    kind: str
    mesh: Mesh
    V: FunctionSpace
    W: FunctionSpace
    entropy: object
    A: sp.csr_matrix
    F: np.ndarray
    qp: QuadraturePoints
    BV: sp.csr_matrix
    PW: sp.csr_matrix
    psi_offset: np.ndarray
    H1: sp.csr_matrix
    M_V: sp.csr_matrix
    data: dict = field(default_factory=dict)
    pair: str = ""
    degree: int = 4
    notes: list = field(default_factory=list)

    def __post_init__(self):
        w = self.qp.weights
        self.B = sp.csr_matrix(self.BV.T @ sp.diags(w) @ self.PW)
        self.M_W = sp.csr_matrix(self.PW.T @ sp.diags(w) @ self.PW)
        self.lump_W = np.asarray(self.PW.T @ w).ravel()
        self.lump_V = _lumped(self.V)

    def feasible_observable(self) -> float:
        if self.kind == "obstacle":
            return float(sample(self.data["phi"], self.qp.x).max() + 1.0)
        return float(sample(self.data["g"], self.qp.x).min() / 2)

    def observable_of(self, u: FeFunction) -> np.ndarray:
        return self.BV @ u.coefficients


def _lumped(V: FunctionSpace) -> np.ndarray:
    ones = np.ones(V.multiplicity) if V.multiplicity > 1 else 1.0
    return np.abs(assemble_vector(ones, V, degree=ASSEMBLY_DEGREE))


# -- builders ----------------------------------------------------------------------------


def build_obstacle(mesh: Mesh, f, phi, pair: str = "bubble_p0", degree: int | None = None,
                   load_points: QuadraturePoints | None = None) -> ProblemSpec:
    """Obstacle problem ``u >= phi`` with ``a(u, v) = int grad u . grad v``.

    ``pair`` is ``bubble_p0`` (P1-bubble / broken P0) or ``p1_p1``; for the
    latter the latent boundary dofs are fixed to ``log(-phi(z))``.
    ``load_points`` overrides the quadrature used for ``F`` (e.g. composite
    points for discontinuous loads).
    """
    if pair not in ("bubble_p0", "p1_p1"):
        raise ValueError(f"unknown element pair {pair!r}")
    bpts = np.vstack([mesh.vertices[mesh.boundary_vertices], mesh.vertices[mesh.facets].mean(axis=1)])
    if np.any(sample(phi, bpts) >= 0):
        raise ValueError("obstacle must be negative on the boundary")
    degree = default_degree(mesh.dim) if degree is None else degree
    notes = []
    if pair == "bubble_p0":
        V = build_space(mesh, "P1Bubble")
        W = build_space(mesh, "P0Broken")
    else:
        if mesh.dim == 2:
            rep = check_local_symmetry(mesh)
            if not rep.passed:
                msg = f"mesh fails the local symmetry check (deviation {rep.deviation:.2e}); rates may degrade"
                warnings.warn(msg, stacklevel=2)
                notes.append(msg)
        V = build_space(mesh, "P1")
        W = build_space(mesh, "P1", dirichlet_value=lambda x: np.log(-sample(phi, x)))
    qp = volume_points(mesh, degree)
    A = assemble(FormSpec("stiffness", V, V), ASSEMBLY_DEGREE)
    F = assemble_vector(f, V, degree=ASSEMBLY_DEGREE, qp=load_points)
    M_V = assemble(FormSpec("mass", V, V), ASSEMBLY_DEGREE)
    ent = Shannon(phi)
    return ProblemSpec(
        "obstacle", mesh, V, W, ent, A, F, qp,
        BV=V.tabulate(qp.cells, qp.bary),
        PW=W.tabulate(qp.cells, qp.bary),
        psi_offset=np.zeros(len(qp)),
        H1=A, M_V=M_V,
        data={"f": f, "phi": phi}, pair=pair, degree=degree, notes=notes,
    )


def plane_strain_lame(E: float, nu: float) -> tuple:
    return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


def build_signorini(mesh: Mesh, lame, f, g, contact_tag: str = "contact",
                    dirichlet_tag: str = DIRICHLET, degree: int | None = None) -> ProblemSpec:
    """Signorini problem ``u . n <= g`` on the contact boundary, clamped on ``dirichlet_tag``.

    The latent space is boundary P1 vanishing at the ends of the contact
    boundary; the latent variable is shifted by the P1 lift of ``-log g`` at
    those two end points.
    """
    if mesh.dim != 2:
        raise ValueError("Signorini problems need a 2D mesh")
    if not check_signorini_facets(mesh, contact_tag):
        raise ValueError("contact boundary fails the facet-size / two-facet condition")
    cverts = mesh.vertices_with_tag(contact_tag)
    if np.any(sample(g, mesh.vertices[cverts]) <= 0):
        raise ValueError("gap must be positive on the contact boundary")
    degree = default_degree(2) if degree is None else degree
    V = build_space(mesh, "P1", 2, dirichlet=(dirichlet_tag,))
    W = build_space(mesh, "BoundaryP1Zero", tag=contact_tag)
    qp = boundary_points(mesh, contact_tag, degree)
    ends = np.setdiff1d(cverts, W.boundary_vertices)
    P1 = build_space(mesh, "P1", dirichlet=None)
    T = P1.tabulate(qp.cells, qp.bary)
    lift_vals = np.zeros(mesh.n_vertices)
    lift_vals[ends] = -np.log(sample(g, mesh.vertices[ends]))
    offset = T @ lift_vals
    A = assemble(FormSpec("elasticity", V, V, {"lame": lame}), ASSEMBLY_DEGREE)
    F = assemble_vector(f, V, degree=ASSEMBLY_DEGREE)
    H1 = assemble(FormSpec("stiffness", V, V), ASSEMBLY_DEGREE)
    M_V = assemble(FormSpec("mass", V, V), ASSEMBLY_DEGREE)
    return ProblemSpec(
        "signorini", mesh, V, W, SignoriniLog(g), A, F, qp,
        BV=normal_trace(V, qp),
        PW=W.tabulate(qp.cells, qp.bary),
        psi_offset=offset,
        H1=H1, M_V=M_V,
        data={"f": f, "g": g, "lame": tuple(lame), "contact_tag": contact_tag},
        pair="p1vec_bp1", degree=degree,
    )


def unconstrained_solution(problem: ProblemSpec) -> FeFunction:
    """Galerkin solution of ``a(u, v) = F(v)`` with the problem's Dirichlet data."""
    V = problem.V
    u = np.zeros(V.n_dofs)
    u[V.fixed_dofs] = V.fixed_values
    fr = V.free_dofs
    rhs = problem.F[fr] - problem.A[fr][:, V.fixed_dofs] @ V.fixed_values
    u[fr] = solve_direct(problem.A[fr][:, fr], rhs)
    return FeFunction(V, u)


# -- references ----------------------------------------------------------------------------


@dataclass
class ReferenceSolution:
    """Analytic or fine-mesh reference.

    For ``analytic`` references ``u``, ``grad`` and ``lam`` are vectorised
    callables of points ``(n, dim)``; ``contact`` returns a mask.  For
    ``fine_mesh`` references ``fine`` holds the FeFunction and transfer is by
    point evaluation.
    """

    kind: str
    u: Callable | None = None
    grad: Callable | None = None
    lam: Callable | None = None
    contact: Callable | None = None
    fine: FeFunction | None = None
    params: dict = field(default_factory=dict)
    s: float = 1.0
    r: float = 1.0
    jumps: tuple = ()

    def cells_cut(self, mesh: Mesh) -> np.ndarray:
        """Cells crossing a discontinuity of the multiplier or load (for composite quadrature)."""
        flag = np.zeros(mesh.n_cells, dtype=bool)
        for jump in self.jumps:
            vals = jump(mesh.vertices[mesh.cells].reshape(-1, mesh.dim)).reshape(mesh.n_cells, -1)
            flag |= (vals.min(axis=1) < 0) & (vals.max(axis=1) > 0)
            flag |= np.any(vals == 0, axis=1)
        return flag


def analytic_obstacle_1d(f0: float = -10.0, phi0: float = -0.2) -> ReferenceSolution:
    """Closed-form 1D obstacle solution for constant load and constant obstacle.

    With ``f0 < 0`` and ``f0 / 8 < phi0 < 0`` the contact set is ``[a, 1 - a]``
    with ``a = sqrt(2 phi0 / f0)``; the solution is the quadratic arc
    ``-f0 x^2 / 2 + f0 a x`` on ``[0, a]``, mirrored on the right, and the
    multiplier is ``-f0`` on the contact set.
    """
    if not (f0 < 0 and phi0 < 0):
        raise ValueError("need a negative load and a negative obstacle")
    if f0 / 8 >= phi0:
        log.warning("no contact: the unconstrained solution stays above the obstacle")
        a = 0.5
        return ReferenceSolution(
            "analytic",
            u=lambda x: 0.5 * f0 * x[:, 0] * (1 - x[:, 0]),
            grad=lambda x: (0.5 * f0 * (1 - 2 * x[:, 0]))[:, None],
            lam=lambda x: np.zeros(len(x)),
            contact=lambda x: np.zeros(len(x), dtype=bool),
            params={"f0": f0, "phi0": phi0, "a": a, "contact": False},
        )
    a = math.sqrt(2 * phi0 / f0)

    def u(x):
        t = np.minimum(x[:, 0], 1 - x[:, 0])
        return np.where(t < a, -f0 * t**2 / 2 + f0 * a * t, phi0)

    def grad(x):
        xx = x[:, 0]
        t = np.minimum(xx, 1 - xx)
        dt = np.where(t < a, -f0 * t + f0 * a, 0.0)
        return np.where(xx <= 0.5, dt, -dt)[:, None]

    def contact(x):
        return (x[:, 0] >= a) & (x[:, 0] <= 1 - a)

    return ReferenceSolution(
        "analytic", u=u, grad=grad,
        lam=lambda x: np.where(contact(x), -f0, 0.0),
        contact=contact,
        params={"f0": f0, "phi0": phi0, "a": a, "contact": True},
        jumps=(lambda x: x[:, 0] - a, lambda x: x[:, 0] - (1 - a)),
    )


def radial_obstacle_2d(phi0: float = -0.2, f0: float = -20.0, f1: float = 20.0, rho: float = 0.25,
                       center=(0.5, 0.5), R_domain: float = 0.5) -> ReferenceSolution:
    """Radially symmetric obstacle benchmark with compactly supported solution.

    The load is ``f0 < 0`` on ``r < rho`` and ``f1 > 0`` on ``rho <= r < R``;
    ``R`` is tied to the contact radius ``r0`` by the zero-flux condition
    ``R^2 = rho^2 + (-f0 / f1)(rho^2 - r0^2)``, and ``r0`` is the root of
    ``u(R) = 0``.  The solution equals ``phi0`` on ``r <= r0`` and vanishes
    for ``r >= R``, so homogeneous Dirichlet data on any domain containing the
    disc of radius ``R`` are exact.  The multiplier is ``-f0`` on the contact
    disc.
    """
    if not (phi0 < 0 and f0 < 0 < f1 and 0 < rho):
        raise ValueError("need phi0 < 0, f0 < 0 < f1, rho > 0")
    c = np.asarray(center, dtype=float)

    def outer(r0):
        return math.sqrt(rho**2 + (-f0 / f1) * (rho**2 - r0**2))

    def u_inner(r, r0):
        return phi0 - (f0 / 2) * ((r**2 - r0**2) / 2 - r0**2 * np.log(r / r0))

    def K(r0):
        return -f0 * (rho**2 - r0**2) + f1 * rho**2

    def u_outer(r, r0):
        return u_inner(rho, r0) + (K(r0) / 2) * np.log(r / rho) - f1 * (r**2 - rho**2) / 4

    def residual(r0):
        return u_outer(outer(r0), r0)

    grid = np.linspace(1e-6 * rho, rho * (1 - 1e-9), 2000)
    vals = np.array([residual(r) for r in grid])
    sign = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    if sign.size == 0:
        raise RuntimeError("no contact radius found for these parameters")
    r0 = brentq(residual, grid[sign[0]], grid[sign[0] + 1], xtol=1e-15, rtol=1e-15, maxiter=200)
    R = outer(r0)
    if R >= R_domain:
        raise ValueError(f"support radius {R:.4f} exceeds the domain radius {R_domain}")

    def radius(x):
        return np.linalg.norm(x - c, axis=1)

    def u(x):
        r = np.maximum(radius(x), 1e-300)
        return np.select(
            [r <= r0, r <= rho, r < R],
            [phi0, u_inner(np.maximum(r, r0), r0), u_outer(np.clip(r, rho, R), r0)],
            0.0,
        )

    def du(r):
        return np.select(
            [r <= r0, r <= rho, r < R],
            [0.0, -(f0 / 2) * (r - r0**2 / np.maximum(r, r0)), K(r0) / (2 * np.maximum(r, rho)) - f1 * r / 2],
            0.0,
        )

    def grad(x):
        d = x - c
        r = np.linalg.norm(d, axis=1)
        e = d / np.maximum(r, 1e-300)[:, None]
        return du(r)[:, None] * e

    def load(x):
        r = radius(x)
        return np.where(r < rho, f0, np.where(r < R, f1, 0.0))

    return ReferenceSolution(
        "analytic", u=u, grad=grad,
        lam=lambda x: np.where(radius(x) <= r0, -f0, 0.0),
        contact=lambda x: radius(x) <= r0,
        params={
            "phi0": phi0, "f0": f0, "f1": f1, "rho": rho, "r0": r0, "R": R,
            "center": tuple(c), "flux_residual": residual(r0), "load": load,
        },
        jumps=(lambda x: radius(x) - r0, lambda x: radius(x) - rho, lambda x: radius(x) - R),
    )


def vi_residual_check(ref: ReferenceSolution, mesh: Mesh, f, phi, n_samples: int = 100,
                      seed: int = 0, degree: int = 8) -> float:
    """Largest violation of ``a(u*, v - u*) >= F(v - u*)`` over random feasible P1 functions."""
    rng = np.random.default_rng(seed)
    qp = composite_points(mesh, degree, ref.cells_cut(mesh))
    V = build_space(mesh, "P1")
    Phi = V.tabulate(qp.cells, qp.bary)
    G = V.tabulate(qp.cells, qp.bary, grad=True)
    us = ref.u(qp.x)
    gs = ref.grad(qp.x)
    fs = sample(f, qp.x)
    phin = sample(phi, mesh.vertices)
    worst = 0.0
    inner = np.setdiff1d(np.arange(mesh.n_vertices), V.fixed_dofs)
    for _ in range(n_samples):
        v = np.zeros(mesh.n_vertices)
        v[inner] = phin[inner] + rng.exponential(0.1, inner.size) * rng.integers(0, 2, inner.size)
        vv = Phi @ v
        gv = np.column_stack([D @ v for D in G])
        val = qp.integrate(np.sum(gs * (gv - gs), axis=1) - fs * (vv - us))
        worst = max(worst, -val)
    return worst


def pdas_obstacle(mesh: Mesh, f, phi, max_iters: int | None = None, c: float = 1.0,
                  load_points: QuadraturePoints | None = None) -> FeFunction:
    """Primal-dual active set solve of the nodal P1 obstacle problem.

    Minimises ``1/2 u^T A u - F^T u`` subject to ``u_i >= phi(z_i)`` at the
    free vertices; the multiplier is nodal ``A u - F``.  Independent of the
    proximal Galerkin code path; used as an oracle.  For the M-matrices of
    P1 stiffness the iteration is monotone and stops after at most
    ``n_free + 1`` steps (the default cap), although starting from the
    unconstrained solution it may release only a few nodes per step.
    """
    V = build_space(mesh, "P1")
    A = assemble(FormSpec("stiffness", V, V), ASSEMBLY_DEGREE)
    F = assemble_vector(f, V, degree=ASSEMBLY_DEGREE, qp=load_points)
    fr = V.free_dofs
    Af, Ff = sp.csr_matrix(A[fr][:, fr]), F[fr]
    ph = sample(phi, mesh.vertices[fr])
    u = solve_direct(Af, Ff)
    lam = np.zeros_like(u)
    active = np.zeros(len(fr), dtype=bool)
    max_iters = len(fr) + 1 if max_iters is None else max_iters
    for it in range(max_iters):
        new = lam + c * (ph - u) > 0
        if it > 0 and np.array_equal(new, active):
            break
        active = new
        inact = ~active
        u = np.where(active, ph, 0.0)
        if inact.any():
            idx = np.flatnonzero(inact)
            rhs = Ff[idx] - Af[idx][:, np.flatnonzero(active)] @ ph[active]
            u[idx] = solve_direct(Af[idx][:, idx], rhs)
        lam = Af @ u - Ff
        lam[inact] = 0.0
    else:
        raise RuntimeError("active set iteration did not settle")
    full = np.zeros(V.n_dofs)
    full[fr] = u
    return FeFunction(V, full)


# -- error metrics --------------------------------------------------------------------------


def error_norms(u_h: FeFunction, ref, degree: int = 8, qp: QuadraturePoints | None = None) -> tuple:
    """``(L2, H1-seminorm)`` norms of ``u_h - u*`` on the solver mesh.

    ``ref`` is a :class:`ReferenceSolution`, a FeFunction on the same mesh, or
    a pair of callables ``(u, grad)``.
    """
    mesh = u_h.space.mesh
    if qp is None:
        cut = ref.cells_cut(mesh) if isinstance(ref, ReferenceSolution) else None
        qp = composite_points(mesh, degree, cut)
    uh = u_h.at(qp.cells, qp.bary)
    gh = u_h.at(qp.cells, qp.bary, grad=True)
    if isinstance(ref, FeFunction):
        us, gs = ref.at(qp.cells, qp.bary), ref.at(qp.cells, qp.bary, grad=True)
    elif isinstance(ref, ReferenceSolution) and ref.kind == "fine_mesh":
        us, gs = ref.fine(qp.x), ref.fine(qp.x, grad=True)
    elif isinstance(ref, ReferenceSolution):
        us, gs = ref.u(qp.x), ref.grad(qp.x)
    else:
        us, gs = ref[0](qp.x), ref[1](qp.x)
    e = (uh - us).reshape(len(qp), -1)
    ge = (gh - np.asarray(gs).reshape(gh.shape)).reshape(len(qp), -1)
    return math.sqrt(qp.integrate(np.sum(e * e, axis=1))), math.sqrt(qp.integrate(np.sum(ge * ge, axis=1)))


def fine_error(u_coarse: FeFunction, fine: FeFunction) -> tuple:
    """``(L2, H1-seminorm)`` of a coarse P1 function against a nested-mesh fine one."""
    V = fine.space
    diff = prolong(u_coarse, V).coefficients - fine.coefficients
    M = assemble(FormSpec("mass", V, V), 4)
    K = assemble(FormSpec("stiffness", V, V), 2)
    return math.sqrt(max(diff @ M @ diff, 0.0)), math.sqrt(max(diff @ K @ diff, 0.0))


def prolong(u: FeFunction, target: FunctionSpace) -> FeFunction:
    """Nodal transfer of a P1 function to a (nested) P1 space."""
    if target.family != "P1" or u.space.family != "P1":
        raise ValueError("prolongation implemented for P1 spaces")
    vals = u(target.mesh.vertices)
    return FeFunction(target, np.asarray(vals).reshape(-1))


def dual_pairing_vector(problem: ProblemSpec, lam_star: Callable | None, degree: int = 8,
                        cut: np.ndarray | None = None) -> np.ndarray:
    """Vector ``<lam*, B v_i>`` over the full ``V`` basis (zero for ``None``)."""
    if lam_star is None:
        return np.zeros(problem.V.n_dofs)
    if problem.kind == "obstacle":
        qp = composite_points(problem.mesh, degree, cut)
        return assemble_vector(lam_star, problem.V, qp=qp)
    qp = boundary_points(problem.mesh, problem.data["contact_tag"], degree)
    return normal_trace(problem.V, qp).T @ (qp.weights * sample(lam_star, qp.x))


def dual_norm_error(lam_h: FeFunction, lam_star, problem: ProblemSpec, cut: np.ndarray | None = None) -> float:
    """Discrete dual norm of ``lam_h - lam*`` through the Riesz lift in the ``a`` form.

    Solves ``a(z, v) = <lam_h - lam*, B v>`` over the free ``V`` dofs and
    returns ``sqrt(a(z, z))``.
    """
    r = problem.B @ lam_h.coefficients - dual_pairing_vector(problem, lam_star, cut=cut)
    fr = problem.V.free_dofs
    rf = r[fr]
    try:
        z = solve_direct(problem.A[fr][:, fr], rf)
    except algebra.SingularMatrixError as exc:
        raise RuntimeError(f"singular Riesz lift system: {exc}") from exc
    return math.sqrt(max(float(rf @ z), 0.0))


def observable_error(problem: ProblemSpec, psi: FeFunction, ref: ReferenceSolution, degree: int = 8) -> float:
    """``||u* - grad R*(psi_h)||_{L2}`` (obstacle problems)."""
    cut = ref.cells_cut(problem.mesh)
    qp = composite_points(problem.mesh, degree, cut)
    o = problem.entropy.grad(qp.x, psi.at(qp.cells, qp.bary))
    e = ref.u(qp.x) - o
    return math.sqrt(qp.integrate(e * e))


def observable_bound(problem: ProblemSpec, u: FeFunction, psi: FeFunction, ref: ReferenceSolution) -> tuple:
    """Both sides of ``||u* - o|| <= ||u* - u_h|| + ||(I - P_W)(u_h - o)||`` at the solver points."""
    qp = problem.qp
    o = problem.entropy.grad(qp.x, problem.PW @ psi.coefficients + problem.psi_offset)
    uh = problem.BV @ u.coefficients
    us = ref.u(qp.x)
    d = uh - o
    wf = problem.W.free_dofs
    P = problem.PW[:, wf]
    M = sp.csr_matrix(P.T @ sp.diags(qp.weights) @ P)
    proj = P @ solve_direct(M, P.T @ (qp.weights * d))
    rest = d - proj
    lhs = math.sqrt(qp.integrate((us - o) ** 2))
    rhs = math.sqrt(qp.integrate((us - uh) ** 2)) + math.sqrt(qp.integrate(rest**2))
    return lhs, rhs


# -- study reports --------------------------------------------------------------------------


def eoc(values, hs=None) -> list:
    """Estimated orders ``log(e_{2h} / e_h) / log 2`` between consecutive rows.

    ``hs`` (optional) must halve exactly from row to row.
    """
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ValueError("need at least two rows")
    if hs is not None:
        for a, b in zip(hs[:-1], hs[1:]):
            if not math.isclose(a / b, 2.0, rel_tol=1e-9):
                raise ValueError("mesh sizes do not halve between rows")
    out = []
    for a, b in zip(values[:-1], values[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.nan)
    return out


@dataclass
class StudyReport:
    """Error table over a mesh sequence with EOC columns."""

    rows: list
    metadata: dict = field(default_factory=dict)
    error_keys: tuple = ("h1", "l2", "dual", "obs_l2")

    def rates(self, key: str) -> list:
        hs = [r["h"] for r in self.rows]
        return eoc([r[key] for r in self.rows], hs if self.metadata.get("halving", True) else None)

    def with_eoc(self) -> list:
        keys = [k for k in self.error_keys if all(k in r for r in self.rows)]
        out = [dict(r) for r in self.rows]
        for k in keys:
            rs = [math.nan] + self.rates(k)
            for r, v in zip(out, rs):
                r[f"eoc_{k}"] = v
        return out

    def to_csv(self) -> str:
        rows = self.with_eoc()
        cols = list(rows[0].keys())
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata, sort_keys=True, default=str) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([("%.17g" % r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()

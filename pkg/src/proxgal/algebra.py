"""Sparse assembly of bilinear and linear forms and a checked direct solver.

Every form is assembled from sparse tabulation matrices at quadrature points:
with ``Phi`` the values of the basis at the points and ``W`` the diagonal of
quadrature weights, a weighted mass matrix is ``Phi_test^T W c Phi_trial``
and a stiffness matrix is ``sum_k D_k^T W D_k``.  This keeps the element loop
inside sparse matrix products.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .quadrature import QuadraturePoints, boundary_points, volume_points
from .spaces import FeFunction, FunctionSpace

log = logging.getLogger(__name__)

FORM_KINDS = (
    "stiffness",
    "mass",
    "weighted_mass",
    "elasticity",
    "boundary_normal_pairing",
    "boundary_mass",
)


class SingularMatrixError(RuntimeError):
    """Raised when a linear system cannot be solved; ``pivot`` locates the failure."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


@dataclass
class FormSpec:
    """Description of a bilinear form.

    ``params`` carries ``coefficient`` (weighted mass), ``lame`` = (lambda, mu)
    (elasticity) or ``tag`` (boundary forms).
    """

    kind: str
    trial: FunctionSpace
    test: FunctionSpace
    params: dict = field(default_factory=dict)


def _values(space: FunctionSpace, qp: QuadraturePoints, comp: int = 0) -> sp.csr_matrix:
    return space.component(space.tabulate(qp.cells, qp.bary), comp)


def _grads(space: FunctionSpace, qp: QuadraturePoints, comp: int = 0) -> list:
    return [space.component(D, comp) for D in space.tabulate(qp.cells, qp.bary, grad=True)]


def _check_mesh(*spaces):
    m = spaces[0].mesh
    if any(s.mesh is not m for s in spaces[1:]):
        raise ValueError("spaces live on different meshes")


def _weighted(qp: QuadraturePoints, c=None) -> sp.dia_matrix:
    w = qp.weights if c is None else qp.weights * np.asarray(c, dtype=float)
    return sp.diags(w)


def mass_matrix(trial, test, qp, coefficient=None) -> sp.csr_matrix:
    _check_mesh(trial, test)
    W = _weighted(qp, coefficient)
    m = trial.multiplicity
    if test.multiplicity != m:
        raise ValueError("mass matrix needs spaces of equal multiplicity")
    out = sum(_values(test, qp, c).T @ W @ _values(trial, qp, c) for c in range(m))
    return sp.csr_matrix(out)


def stiffness_matrix(trial, test, qp) -> sp.csr_matrix:
    _check_mesh(trial, test)
    W = _weighted(qp)
    out = 0
    for c in range(trial.multiplicity):
        Gt, Gs = _grads(test, qp, c), _grads(trial, qp, c)
        out = out + sum(a.T @ W @ b for a, b in zip(Gt, Gs))
    return sp.csr_matrix(out)


def strain_components(space: FunctionSpace, qp: QuadraturePoints) -> tuple:
    """Sparse maps coefficient -> (eps_xx, eps_yy, eps_xy) at the points."""
    if space.multiplicity != 2:
        raise ValueError("strain needs a 2D vector space")
    gx, gy = (_grads(space, qp, c) for c in range(2))
    return gx[0], gy[1], 0.5 * (gx[1] + gy[0])


def elasticity_matrix(space, qp, lame) -> sp.csr_matrix:
    """Plane-strain isotropic form with C eps = 2 mu eps + lambda tr(eps) I."""
    lam, mu = lame
    W = _weighted(qp)
    exx, eyy, exy = strain_components(space, qp)
    div = exx + eyy
    A = 2 * mu * (exx.T @ W @ exx + eyy.T @ W @ eyy + 2 * exy.T @ W @ exy) + lam * div.T @ W @ div
    return sp.csr_matrix(A)


def normal_trace(space: FunctionSpace, qp: QuadraturePoints) -> sp.csr_matrix:
    """Map vector coefficients to ``v . n`` at boundary points."""
    if qp.normals is None:
        raise ValueError("normal trace needs boundary quadrature points")
    if space.multiplicity == 1:
        return sp.diags(qp.normals[:, 0]) @ _values(space, qp)
    return sp.csr_matrix(
        sum(sp.diags(qp.normals[:, c]) @ _values(space, qp, c) for c in range(space.multiplicity))
    )


def assemble(form: FormSpec, degree: int = 6) -> sp.csr_matrix:
    """Assemble a :class:`FormSpec`; rows index the test space."""
    kind, trial, test = form.kind, form.trial, form.test
    if kind not in FORM_KINDS:
        raise ValueError(f"unknown form kind {kind!r}")
    _check_mesh(trial, test)
    mesh = trial.mesh
    if kind.startswith("boundary"):
        qp = boundary_points(mesh, form.params["tag"], degree)
        if kind == "boundary_mass":
            return mass_matrix(trial, test, qp)
        # b(v, w) = int v.n w ds; rows follow the test space
        # the vector (displacement) space carries the normal trace
        V, Wsp = (test, trial) if test.multiplicity > trial.multiplicity else (trial, test)
        B = normal_trace(V, qp).T @ _weighted(qp) @ _values(Wsp, qp)
        return sp.csr_matrix(B if V is test else B.T)
    qp = volume_points(mesh, degree)
    if kind == "stiffness":
        return stiffness_matrix(trial, test, qp)
    if kind == "mass":
        return mass_matrix(trial, test, qp)
    if kind == "weighted_mass":
        c = form.params["coefficient"]
        if isinstance(c, FeFunction):
            cv = c.at(qp.cells, qp.bary)
        elif callable(c):
            cv = np.asarray(c(qp.x), dtype=float)
        else:
            cv = np.full(len(qp), float(c))
        return mass_matrix(trial, test, qp, cv)
    if trial is not test:
        raise ValueError("elasticity needs identical trial and test spaces")
    return elasticity_matrix(trial, qp, form.params["lame"])


def assemble_vector(load, test: FunctionSpace, degree: int = 6, qp: QuadraturePoints | None = None) -> np.ndarray:
    """Entries ``int f phi_i``; ``load`` is a constant, callable or FeFunction."""
    qp = volume_points(test.mesh, degree) if qp is None else qp
    m = test.multiplicity
    if isinstance(load, FeFunction):
        f = load.at(qp.cells, qp.bary)
    elif callable(load):
        f = np.asarray(load(qp.x), dtype=float)
    else:
        f = np.asarray(load, dtype=float)
    f = np.broadcast_to(f, (len(qp), m) if m > 1 else (len(qp),))
    out = np.zeros(test.n_dofs)
    for c in range(m):
        fc = f[:, c] if m > 1 else f
        out += _values(test, qp, c).T @ (qp.weights * fc)
    return out


def equilibrate(A, sweeps: int = 5):
    """Ruiz scaling: return ``(r, c)`` so that ``diag(r) A diag(c)`` has rows and columns of unit max-norm."""
    C = sp.coo_matrix(A)
    i, j, a = C.row, C.col, np.abs(C.data)
    r = np.ones(A.shape[0])
    c = np.ones(A.shape[1])
    for _ in range(sweeps):
        s = r[i] * a * c[j]
        rm = np.zeros_like(r)
        cm = np.zeros_like(c)
        np.maximum.at(rm, i, s)
        np.maximum.at(cm, j, s)
        rm[rm == 0] = 1.0
        cm[cm == 0] = 1.0
        r /= np.sqrt(rm)
        c /= np.sqrt(cm)
    return r, c


def solve_direct(A, rhs, rtol: float = 1e-10, scale: bool = True, backward: bool = False) -> np.ndarray:
    """Sparse LU solve with a residual check.

    The system is Ruiz-equilibrated before factorization (``scale``); the
    residual contract ``||Ax - b|| <= rtol ||b||`` is checked on the original
    system.  With ``backward`` the check uses the normwise backward error
    ``||Ax - b|| / (||A|| ||x|| + ||b||)`` instead, which is the attainable
    quantity for ill-conditioned systems whose right-hand side is small.  Raises :class:`SingularMatrixError` naming the failing pivot when
    the matrix is structurally or numerically singular.
    """
    A0 = sp.csc_matrix(A)
    A = A0
    rhs = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("matrix must be square")
    nnz_rows = np.diff(sp.csr_matrix(A).indptr)
    nnz_cols = np.diff(A.indptr)
    if np.any(nnz_rows == 0) or np.any(nnz_cols == 0):
        k = int(np.argmin(np.minimum(nnz_rows, nnz_cols)))
        raise SingularMatrixError("structurally singular matrix: empty row or column", k)
    r = c = np.ones(n)
    if scale:
        r, c = equilibrate(A)
        A = sp.csc_matrix(sp.diags(r) @ A @ sp.diags(c))
    bnorm = np.linalg.norm(rhs)
    x = res = diagU = None
    # a symmetric fill-reducing ordering is far cheaper on saddle systems; it
    # is kept only if it meets the forward residual, else fall back to COLAMD
    for attempt, opts in enumerate(_LU_OPTIONS):
        last = attempt + 1 == len(_LU_OPTIONS)
        try:
            lu = spla.splu(A, **opts)
        except RuntimeError as exc:
            if not last:
                continue
            raise SingularMatrixError(f"LU factorization failed: {exc}", _dense_pivot(A)) from exc
        diagU = np.abs(lu.U.diagonal())
        if diagU.min() == 0.0:
            if not last:
                continue
            k = int(np.argmin(diagU))
            raise SingularMatrixError("numerically singular matrix", int(lu.perm_c[k]))
        with np.errstate(all="ignore"):
            x = c * lu.solve(r * rhs)
            res = np.linalg.norm(A0 @ x - rhs)
            for _ in range(3):  # iterative refinement
                if not np.isfinite(res) or bnorm == 0 or res <= rtol * bnorm:
                    break
                x = x + c * lu.solve(r * (rhs - A0 @ x))
                res = np.linalg.norm(A0 @ x - rhs)
        tol = max(rtol * _reference_norm(A0, x, bnorm, backward), _roundoff_floor(A0, x, rhs))
        if np.isfinite(res) and res <= tol:
            break
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution", int(np.argmin(diagU)))
    ref = _reference_norm(A0, x, bnorm, backward)
    floor = _roundoff_floor(A0, x, rhs)
    if ref > 0 and res > max(rtol * ref, floor):
        raise SingularMatrixError(
            f"relative residual {res / ref:.3e} exceeds {rtol:.1e}", int(np.argmin(diagU))
        )
    if res > rtol * ref:
        log.debug("residual %.3e accepted at the rounding floor %.3e", res, floor)
    return x


def _roundoff_floor(A, x, b) -> float:
    """Smallest residual norm that can be certified in double precision."""
    if not np.all(np.isfinite(x)):
        return 0.0
    return 32 * np.finfo(float).eps * float(np.linalg.norm(abs(A) @ np.abs(x) + np.abs(b)))


def _reference_norm(A, x, bnorm, backward):
    if backward and np.all(np.isfinite(x)):
        return bnorm + spla.norm(A, np.inf) * np.linalg.norm(x)
    return bnorm


_LU_OPTIONS = (
    dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1),
    dict(),
)


def _dense_pivot(A) -> int | None:
    if A.shape[0] > 4000:
        return None
    _, _, U = sla.lu(A.toarray())
    return int(np.argmin(np.abs(np.diag(U))))


def write_coo(A, path) -> None:
    """Dump ``i j value`` lines (zero-based) for external inspection."""
    C = sp.coo_matrix(A)
    C.sum_duplicates()
    order = np.lexsort((C.col, C.row))
    lines = [f"{i} {j} {v!r}" for i, j, v in zip(C.row[order], C.col[order], C.data[order].tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_coo(path, shape=None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)

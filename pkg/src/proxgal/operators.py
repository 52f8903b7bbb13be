"""Quasi-interpolation, Fortin and enriching operators.

These operators are not needed by the solver itself; they make the
approximation properties behind the error analysis executable.  Every
operator returns nodal P1 data (plus bubble coefficients for the Fortin
map), so its output can be compared against the input with the error
norms of :mod:`proxgal.problems`.

Inputs ``v`` may be constants, vectorised callables of ``(n, dim)`` points,
or FeFunctions (on the toolbox mesh, or on any other mesh covering it).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from .algebra import mass_matrix
from .mesh import DIRICHLET, Mesh, check_local_symmetry, check_signorini_facets, contact_chain
from .quadrature import QuadraturePoints, boundary_points, quadrature_rule, volume_points
from .spaces import FeFunction, FunctionSpace, build_space, evaluate, interpolate

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
# Gauss-Radau on [-1, 1] with the left end included: exact for quadratics
RADAU_POINTS = np.array([-1.0, 1.0 / 3.0])
RADAU_WEIGHTS = np.array([0.5, 1.5])


class WeightError(ValueError):
    """A node is not a convex combination of the required points."""


# -- helpers ---------------------------------------------------------------------


class _CellField:
    """Callable of points that can also be fed cell coordinates, skipping point location."""

    def __init__(self, mesh: Mesh, f):
        self.mesh, self.f = mesh, f

    def __call__(self, x, cells=None, bary=None):
        if cells is None:
            cells, bary = self.mesh.locate(x)
        return self.f(cells, bary, x)


def _sampler(v, mesh: Mesh, m: int = 1):
    """Return ``f(cells, bary, x)`` evaluating ``v`` at points of ``mesh``."""
    if isinstance(v, _CellField) and v.mesh is mesh:
        return v.f
    if isinstance(v, FeFunction):
        if v.space.mesh is mesh:
            return lambda cells, bary, x: v.at(cells, bary)
        return lambda cells, bary, x: evaluate(v, x)
    if callable(v):
        def f(cells, bary, x):
            out = np.asarray(v(x), dtype=float)
            return np.broadcast_to(out, (len(x), m) if m > 1 else (len(x),))
        return f
    c = np.asarray(v, dtype=float)
    return lambda cells, bary, x: np.broadcast_to(c, (len(x), m) if m > 1 else (len(x),)).astype(float)


def _values(v, mesh, qp: QuadraturePoints, m: int = 1) -> np.ndarray:
    return np.asarray(_sampler(v, mesh, m)(qp.cells, qp.bary, qp.x), dtype=float)


def convex_weights(points: np.ndarray, target: np.ndarray, tol: float = WEIGHT_TOL) -> np.ndarray:
    """Minimal-norm convex weights ``a >= 0, sum a = 1, a @ points = target``.

    The minimal-norm solution of the equality system is used when it is
    nonnegative; otherwise the same objective is minimised under the sign
    constraints.  Raises :class:`WeightError` when ``target`` is outside the
    convex hull of ``points``.
    """
    P = np.asarray(points, dtype=float)
    z = np.asarray(target, dtype=float)
    k = len(P)
    M = np.vstack([P.T, np.ones(k)])
    rhs = np.append(z, 1.0)
    a = np.linalg.lstsq(M, rhs, rcond=None)[0]
    scale = max(1.0, float(np.abs(P - z).max()))
    if a.min() < -tol:
        res = minimize(
            lambda a: 0.5 * a @ a,
            np.full(k, 1.0 / k),
            jac=lambda a: a,
            constraints=[{"type": "eq", "fun": lambda a: M @ a - rhs, "jac": lambda a: M}],
            bounds=[(0.0, None)] * k,
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": 200},
        )
        a = res.x
    a = np.where(a < 0, 0.0, a)
    s = a.sum()
    if s <= 0 or np.abs(M @ (a / s) - rhs).max() > 1e-10 * scale:
        raise WeightError(f"point {z} is not in the convex hull of the given points")
    return a / s


@dataclass
class BoundaryWeights:
    """Weights of the contact-boundary average at one node.

    ``nodes`` are ``(z, z1, z2)``: the node and its two chain neighbours;
    ``alpha`` the convex weights with ``z = sum alpha_i s_i``.
    """

    nodes: np.ndarray
    alpha: np.ndarray
    centres: np.ndarray


def radau_points(a: np.ndarray, b: np.ndarray):
    """Two-point Radau rule on segment ``[a, b]`` (left end included): points and weights."""
    t = (RADAU_POINTS + 1) / 2
    length = float(np.linalg.norm(np.asarray(b) - np.asarray(a)))
    x = (1 - t)[:, None] * a[None, :] + t[:, None] * b[None, :]
    return x, RADAU_WEIGHTS / 2 * length


# -- the toolbox ---------------------------------------------------------------------


@dataclass(eq=False)
class OperatorToolbox:
    """Target spaces and cached geometric data for the operators on one mesh.

    Parameters
    ----------
    mesh : the mesh
    dirichlet_tag : tag preferred when choosing boundary facets for Scott-Zhang
    contact_tag : contact boundary tag (Signorini operators only)
    degree : quadrature degree for averages of the input
    """

    mesh: Mesh
    dirichlet_tag: str = DIRICHLET
    contact_tag: str | None = None
    degree: int = 8
    P1: FunctionSpace = field(init=False)
    P1Bubble: FunctionSpace = field(init=False)
    weights: dict = field(init=False)
    boundary_weights: dict = field(init=False)

    def __post_init__(self):
        m = self.mesh
        self.P1 = build_space(m, "P1", dirichlet=None)
        self.P1Bubble = build_space(m, "P1Bubble", dirichlet=None)
        self.weights = self._volume_weights()
        self.boundary_weights = {}
        if self.contact_tag is not None:
            if not check_signorini_facets(m, self.contact_tag):
                raise WeightError("contact boundary fails the mesh condition for boundary weights")
            self.boundary_weights = self._contact_weights()

    # -- parameters ----------------------------------------------------------
    @property
    def epsilon(self) -> float:
        """Interior shift of the obstacle enrichment."""
        m = self.mesh
        return float(m.n_cells ** -0.5 * np.min(m.cell_diameters) ** (2 - m.dim / 2))

    @property
    def epsilon_contact(self) -> float:
        """Shift of the contact enrichment."""
        m = self.mesh
        return float(m.n_cells ** -0.5 * np.min(m.cell_diameters))

    # -- convex patch weights ------------------------------------------------
    def _volume_weights(self) -> dict:
        m = self.mesh
        cent = m.centroids
        out = {}
        for z in m.interior_vertices:
            cells = m.patch(int(z))
            try:
                a = convex_weights(cent[cells], m.vertices[z])
            except WeightError as exc:
                raise WeightError(f"degenerate patch at vertex {z}: {exc}") from exc
            out[int(z)] = (cells, a)
        return out

    def weight_defect(self) -> float:
        """Largest ``|z - sum a s_T| / h`` over interior nodes."""
        m = self.mesh
        worst = 0.0
        for z, (cells, a) in self.weights.items():
            d = np.abs(a @ m.centroids[cells] - m.vertices[z]).max()
            worst = max(worst, d / m.cell_diameters[cells].max())
        return float(worst)

    def _contact_weights(self) -> dict:
        m = self.mesh
        chain = contact_chain(m, self.contact_tag)
        X = m.vertices[chain]

        def centre(i):
            # phi-weighted centroid of the boundary hat at chain position i
            num, den = np.zeros(2), 0.0
            for j in (i - 1, i + 1):
                if 0 <= j < len(chain):
                    x, w = radau_points(X[i], X[j])
                    phi = 1 - np.linalg.norm(x - X[i], axis=1) / np.linalg.norm(X[j] - X[i])
                    num += (w * phi) @ x
                    den += w @ phi
            return num / den

        out = {}
        for i in range(1, len(chain) - 1):
            s0, sl, sr = centre(i), centre(i - 1), centre(i + 1)
            z = X[i]
            if np.linalg.norm(s0 - z) <= WEIGHT_TOL * np.linalg.norm(X[i + 1] - X[i - 1]):
                alpha, nodes = np.array([1.0, 0.0, 0.0]), chain[[i, i - 1, i + 1]]
            else:
                # z sits between s0 and the centre on the opposite side
                side = i + 1 if np.dot(s0 - z, X[i + 1] - z) < 0 else i - 1
                s1 = sr if side == i + 1 else sl
                a = convex_weights(np.vstack([s0, s1]), z)
                if side in (0, len(chain) - 1) and a[1] > WEIGHT_TOL:
                    raise WeightError(f"contact weight on the end vertex {chain[side]} is positive")
                other = i - 1 if side == i + 1 else i + 1
                alpha, nodes = np.array([a[0], a[1], 0.0]), chain[[i, side, other]]
            out[int(chain[i])] = BoundaryWeights(nodes, alpha, np.vstack([s0, sl, sr]))
        return out

    # -- Scott-Zhang -------------------------------------------------------------
    def _sz_simplices(self):
        """Per vertex: ("facet", f) on the boundary, ("cell", c) inside."""
        m = self.mesh
        choice = {}
        tags = np.asarray(m.facet_tags)
        preferred = tags == self.dirichlet_tag
        for order in (np.flatnonzero(preferred), np.flatnonzero(~preferred)):
            for f in order:
                for v in m.facets[f]:
                    choice.setdefault(int(v), ("facet", int(f)))
        for z in range(m.n_vertices):
            if z not in choice:
                choice[z] = ("cell", int(m.patch(z).min()))
        return choice

    def scott_zhang(self, v) -> FeFunction:
        """Scott-Zhang interpolant built from the dual basis on one simplex per node."""
        m = self.mesh
        d = m.dim
        vals = np.zeros(m.n_vertices)
        f = _sampler(v, m)
        cells_all, bary_all, dual_all, owner = [], [], [], []
        cell_rule = quadrature_rule(d, self.degree)
        facet_rule = quadrature_rule(d - 1, self.degree) if d > 1 else None
        for z, (kind, idx) in self._sz_simplices().items():
            if kind == "cell":
                cell, rule, k = idx, cell_rule, d
                bary, meas = rule.bary, m.cell_volumes[cell]
                lam = bary[:, int(np.flatnonzero(m.cells[cell] == z)[0])]
            else:
                cell, fverts, k = int(m.facet_cells[idx]), m.facets[idx], d - 1
                if k == 0:
                    # a point facet: the dual functional is evaluation
                    cells_all.append([cell])
                    bary_all.append((m.cells[cell] == z).astype(float)[None, :])
                    dual_all.append([1.0])
                    owner.append([z])
                    continue
                rule = facet_rule
                loc = [int(np.flatnonzero(m.cells[cell] == u)[0]) for u in fverts]
                bary = np.zeros((len(rule.weights), d + 1))
                bary[:, loc] = rule.bary
                meas = float(m.facet_measures(m.facets[[idx]])[0])
                lam = rule.bary[:, int(np.flatnonzero(fverts == z)[0])]
            # biorthogonal dual basis of P1 on a k-simplex, times the quadrature weight
            w = rule.weights / rule.weights.sum() * meas
            cells_all.append(np.full(len(w), cell))
            bary_all.append(bary)
            dual_all.append(w * ((k + 1) * (k + 2) * lam - (k + 1)) / meas)
            owner.append(np.full(len(w), z))
        cells = np.concatenate(cells_all)
        bary = np.vstack(bary_all)
        x = np.einsum("qi,qij->qj", bary, m.vertices[m.cells[cells]])
        fx = np.asarray(f(cells, bary, x), dtype=float)
        vals = np.bincount(np.concatenate(owner), np.concatenate(dual_all) * fx, minlength=m.n_vertices)
        return FeFunction(self.P1, vals)

    # -- Clement-type interpolants ---------------------------------------------------
    def cell_means(self, v) -> np.ndarray:
        m = self.mesh
        qp = volume_points(m, self.degree)
        vals = _values(v, m, qp)
        return np.bincount(qp.cells, qp.weights * vals, minlength=m.n_cells) / m.cell_volumes

    def clement_weighted(self, v, boundary: np.ndarray | None = None) -> FeFunction:
        """Convex combination of patch cell means; boundary nodes from Scott-Zhang."""
        means = self.cell_means(v)
        out = self.scott_zhang(v).coefficients if boundary is None else boundary.copy()
        for z, (cells, a) in self.weights.items():
            out[z] = a @ means[cells]
        return FeFunction(self.P1, out)

    def clement_mass(self, v) -> FeFunction:
        """Hat-function-weighted patch averages; boundary nodes from Scott-Zhang.

        Affine reproduction requires the local symmetry condition; a warning
        is emitted when the mesh does not satisfy it.
        """
        m = self.mesh
        rep = check_local_symmetry(m)
        if not rep.passed:
            warnings.warn(
                f"mesh is not locally symmetric (deviation {rep.deviation:.2e}); "
                "the mass-weighted interpolant loses its approximation order",
                stacklevel=2,
            )
        qp = volume_points(m, self.degree)
        Phi = self.P1.tabulate(qp.cells, qp.bary)
        num = Phi.T @ (qp.weights * _values(v, m, qp))
        den = Phi.T @ qp.weights
        out = self.scott_zhang(v).coefficients
        iv = m.interior_vertices
        out[iv] = num[iv] / den[iv]
        return FeFunction(self.P1, out)

    # -- Fortin operators ---------------------------------------------------------
    def averaged_projection(self, v) -> FeFunction:
        """Local L2 projection onto broken P1, averaged at vertices; zero on the boundary."""
        m = self.mesh
        d = m.dim
        qp = volume_points(m, self.degree)
        vals = _values(v, m, qp)
        nq = len(qp) // m.n_cells
        lam = qp.bary.reshape(m.n_cells, nq, d + 1)
        w = qp.weights.reshape(m.n_cells, nq)
        rhs = np.einsum("cq,cqi->ci", w * vals.reshape(m.n_cells, nq), lam)
        # P1 mass on a simplex: |T| (1 + delta_ij) / ((d+1)(d+2))
        Mloc = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        loc = np.linalg.solve(Mloc, (rhs / m.cell_volumes[:, None]).T).T
        sums = np.bincount(m.cells.ravel(), loc.ravel(), minlength=m.n_vertices)
        counts = np.bincount(m.cells.ravel(), minlength=m.n_vertices)
        out = sums / counts
        out[m.boundary_vertices] = 0.0
        return FeFunction(self.P1, out)

    def fortin_bubble(self, v) -> FeFunction:
        """Fortin map onto P1-bubble preserving cell means.

        The averaged projection (zero trace) is corrected in every cell by the
        bubble multiple that restores the cell integral of ``v``.
        """
        m = self.mesh
        base = self.averaged_projection(v)
        qp = volume_points(m, self.degree)
        resid = _values(v, m, qp) - base.at(qp.cells, qp.bary)
        num = np.bincount(qp.cells, qp.weights * resid, minlength=m.n_cells)
        bub = np.bincount(qp.cells, qp.weights * np.prod(qp.bary, axis=1), minlength=m.n_cells)
        return FeFunction(self.P1Bubble, np.concatenate([base.coefficients, num / bub]))

    def fortin_contact(self, v) -> FeFunction:
        """Scalar map matching the contact-boundary moments against the multiplier space.

        Nodes interior to the contact boundary take the boundary L2 projection
        onto the multiplier space; all other nodes take Scott-Zhang values.
        """
        W, M, rhs = self._contact_projection_data(v)
        out = self.scott_zhang(v).coefficients
        inner = W.boundary_vertices
        if M.shape[0]:
            # the end nodes keep their Scott-Zhang values; move their share to the right
            qp = boundary_points(self.mesh, self.contact_tag, self.degree)
            rest = out.copy()
            rest[inner] = 0.0
            Phi = W.tabulate(qp.cells, qp.bary)
            fixed = FeFunction(self.P1, rest).at(qp.cells, qp.bary)
            out[inner] = spla.spsolve(sp.csc_matrix(M), rhs - Phi.T @ (qp.weights * fixed))
        return FeFunction(self.P1, out)

    def fortin_signorini(self, v) -> FeFunction:
        """Vector Fortin map: contact map on the normal part, Scott-Zhang on the tangential part."""
        n, tau = self.contact_frame()
        vn, vt = self._split(v, n, tau)
        pn = self.fortin_contact(vn).coefficients
        pt = self.scott_zhang(vt).coefficients
        return self._join(pn, pt, n, tau)

    def contact_moment_residual(self, v, pv: FeFunction) -> float:
        """``max_w |(pv - v, w)_contact| / ||w||`` over the multiplier space."""
        W, M, rhs = self._contact_projection_data(v)
        qp = boundary_points(self.mesh, self.contact_tag, self.degree)
        Phi = W.tabulate(qp.cells, qp.bary)
        r = Phi.T @ (qp.weights * pv.at(qp.cells, qp.bary)) - rhs
        return float(np.sqrt(max(r @ spla.spsolve(sp.csc_matrix(M), r), 0.0)))

    def _contact_projection_data(self, v):
        if self.contact_tag is None:
            raise ValueError("toolbox has no contact tag")
        m = self.mesh
        W = build_space(m, "BoundaryP1Zero", tag=self.contact_tag)
        qp = boundary_points(m, self.contact_tag, self.degree)
        M = mass_matrix(W, W, qp)
        Phi = W.tabulate(qp.cells, qp.bary)
        rhs = Phi.T @ (qp.weights * _values(v, m, qp))
        return W, M, rhs

    # -- contact-boundary interpolant ------------------------------------------------
    def contact_frame(self):
        """Outward unit normal and tangent of the straight contact boundary."""
        m = self.mesh
        nrm = m.facet_normals(m.facets_with_tag(self.contact_tag))[0]
        return nrm, np.array([-nrm[1], nrm[0]])

    def clement_boundary_signorini(self, v) -> FeFunction:
        """P1 function with contact-node values from boundary hat averages.

        Each node interior to the contact boundary combines the hat-weighted
        averages of its own and one neighbour's boundary patch with the cached
        convex weights; every other node takes its Scott-Zhang value.
        """
        if not self.boundary_weights:
            raise ValueError("toolbox was built without a contact tag")
        m = self.mesh
        f = _sampler(v, m)
        chain = contact_chain(m, self.contact_tag)
        X = m.vertices[chain]
        pos = {int(z): i for i, z in enumerate(chain)}
        rule = quadrature_rule(1, self.degree)

        # hat-weighted means over the contact facets around every chain node, in one pass
        xs, ws, owner = [], [], []
        for i in range(len(chain)):
            for j in (i - 1, i + 1):
                if 0 <= j < len(chain):
                    xs.append(rule.bary[:, :1] * X[i] + rule.bary[:, 1:] * X[j])
                    ws.append(rule.weights * np.linalg.norm(X[j] - X[i]) * rule.bary[:, 0])
                    owner.append(np.full(len(rule.weights), i))
        x, w, owner = np.vstack(xs), np.concatenate(ws), np.concatenate(owner)
        cells, bary = m.locate(x)
        fx = np.asarray(f(cells, bary, x), dtype=float)
        avg = np.bincount(owner, w * fx, minlength=len(chain)) / np.bincount(owner, w, minlength=len(chain))

        out = self.scott_zhang(v).coefficients
        for z, bw in self.boundary_weights.items():
            out[z] = sum(a * avg[pos[int(u)]] for a, u in zip(bw.alpha, bw.nodes) if a > 0)
        return FeFunction(self.P1, out)

    def _split(self, v, n, tau):
        m = self.mesh
        f = _sampler(v, m, 2)

        def comp(e):
            return _CellField(m, lambda cells, bary, x: np.asarray(f(cells, bary, x), dtype=float) @ e)

        if isinstance(v, FeFunction) and v.space.mesh is m and v.space.family == "P1":
            c = v.coefficients.reshape(-1, 2)
            return FeFunction(self.P1, c @ n), FeFunction(self.P1, c @ tau)
        return comp(n), comp(tau)

    def _join(self, cn, ct, n, tau) -> FeFunction:
        V2 = build_space(self.mesh, "P1", multiplicity=2, dirichlet=None)
        c = cn[:, None] * n[None, :] + ct[:, None] * tau[None, :]
        return FeFunction(V2, c.ravel())

    # -- enriching maps -----------------------------------------------------------
    def enrich_obstacle(self, v, phi, delta: float | None = None, pair: str = "bubble_p0",
                        tol: float = 1e-12) -> "Enrichment":
        """Strictly feasible competitor ``C(v - phi) + phi + eps_h``.

        ``pair`` selects the interpolant: cell-mean weights for ``bubble_p0``,
        hat-weighted averages for ``p1_p1``.  Inputs whose discrete mean
        constraints fail by more than ``tol`` (relative) are rejected.
        """
        m = self.mesh
        fv, fphi = _sampler(v, m), _sampler(phi, m)

        gap = _CellField(m, lambda cells, bary, x: np.asarray(fv(cells, bary, x), dtype=float)
                         - np.asarray(fphi(cells, bary, x), dtype=float))

        qp = volume_points(m, self.degree)
        g = gap(qp.x, qp.cells, qp.bary)
        if pair == "bubble_p0":
            mom = np.bincount(qp.cells, qp.weights * g, minlength=m.n_cells)
            scale = m.cell_volumes
        elif pair == "p1_p1":
            Phi = self.P1.tabulate(qp.cells, qp.bary)
            iv = m.interior_vertices
            mom = (Phi.T @ (qp.weights * g))[iv]
            scale = (Phi.T @ qp.weights)[iv]
        else:
            raise ValueError(f"unknown pair {pair!r}")
        if np.any(mom < -tol * scale):
            k = int(np.argmin(mom / scale))
            raise ValueError(f"input violates the discrete constraint (moment {mom[k]:.3e} at index {k})")
        C = self.clement_weighted(gap) if pair == "bubble_p0" else self.clement_mass(gap)
        eps = self.epsilon
        shift = C.coefficients.copy()
        shift[m.interior_vertices] += eps
        bnd = shift[m.boundary_vertices]
        delta = float(bnd.min()) if delta is None else float(delta)
        shift_fn = FeFunction(self.P1, shift)
        margin = float(min(shift.min(), shift_fn.at(qp.cells, qp.bary).min()))
        value = FeFunction(self.P1, shift + interpolate(self.P1, phi).coefficients)
        return Enrichment(value, shift_fn, eps, delta, margin)

    def enrich_signorini(self, v, g, delta: float | None = None, tol: float = 1e-12) -> "Enrichment":
        """Vector competitor with normal trace strictly below the gap ``g``.

        Normal part ``C(v.n - g) + g - eps_h`` (contact interpolant), tangential
        part Scott-Zhang.  ``shift`` in the result is ``g - (E v).n`` on the
        P1 level, whose minimum over the contact boundary is the margin.
        """
        m = self.mesh
        n, tau = self.contact_frame()
        vn, vt = self._split(v, n, tau)
        fn, fg = _sampler(vn, m), _sampler(g, m)

        gap = _CellField(m, lambda cells, bary, x: np.asarray(fn(cells, bary, x), dtype=float)
                         - np.asarray(fg(cells, bary, x), dtype=float))

        W = build_space(m, "BoundaryP1Zero", tag=self.contact_tag)
        qp = boundary_points(m, self.contact_tag, self.degree)
        Phi = W.tabulate(qp.cells, qp.bary)
        mom = Phi.T @ (qp.weights * gap(qp.x, qp.cells, qp.bary))
        scale = Phi.T @ qp.weights
        if np.any(mom > tol * scale):
            k = int(np.argmax(mom / scale))
            raise ValueError(f"input violates the discrete contact constraint (moment {mom[k]:.3e} at index {k})")
        C = self.clement_boundary_signorini(gap).coefficients
        eps = self.epsilon_contact
        inner = W.boundary_vertices
        shift = -C
        shift[inner] += eps
        ends = np.setdiff1d(m.vertices_with_tag(self.contact_tag), inner)
        delta = float(shift[ends].min()) if delta is None else float(delta)
        shift_fn = FeFunction(self.P1, shift)
        on = np.unique(m.facets[m.facets_with_tag(self.contact_tag)])
        margin = float(min(shift[on].min(), shift_fn.at(qp.cells, qp.bary).min()))
        normal = interpolate(self.P1, g).coefficients - shift
        tangential = self.scott_zhang(vt).coefficients
        return Enrichment(self._join(normal, tangential, n, tau), shift_fn, eps, delta, margin)


@dataclass
class Enrichment:
    """Result of an enriching map.

    Attributes
    ----------
    value : the competitor (P1; exact when the constraint data are affine)
    shift : the strictly positive slack (``o - phi`` or ``g - o``) as a P1 function
    epsilon : the interior shift
    delta : the boundary slack
    margin : minimum of ``shift`` over nodes and quadrature points
    """

    value: FeFunction
    shift: FeFunction
    epsilon: float
    delta: float
    margin: float

    @property
    def floor(self) -> float:
        return min(self.delta, self.epsilon)

    @property
    def feasible(self) -> bool:
        return self.margin >= self.floor - 1e-12


def fortin_residual(toolbox: OperatorToolbox, v, pv: FeFunction) -> float:
    """``max_w |(v - pv, w)| / ||w||_L2`` over piecewise constants ``w``."""
    m = toolbox.mesh
    qp = volume_points(m, toolbox.degree)
    r = np.bincount(qp.cells, qp.weights * (_values(v, m, qp) - pv.at(qp.cells, qp.bary)), minlength=m.n_cells)
    return float(np.sqrt(np.sum(r**2 / m.cell_volumes)))


def fortin_bubble(toolbox, v):
    return toolbox.fortin_bubble(v)


def clement_weighted(toolbox, v):
    return toolbox.clement_weighted(v)


def clement_mass(toolbox, v):
    return toolbox.clement_mass(v)


def scott_zhang(toolbox, v):
    return toolbox.scott_zhang(v)


def enrich_obstacle(toolbox, v, phi, delta=None, pair="bubble_p0"):
    return toolbox.enrich_obstacle(v, phi, delta, pair)


def clement_boundary_signorini(toolbox, v):
    return toolbox.clement_boundary_signorini(v)


def enrich_signorini(toolbox, v, g, delta=None):
    return toolbox.enrich_signorini(v, g, delta)

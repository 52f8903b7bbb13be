"""Quadrature on reference simplices and its push-forward to mesh cells and facets.

Reference rules are stored in barycentric form so that the same point set
can be used by every element family on a cell.  Interval rules are
Gauss-Legendre; triangle rules are collapsed (Duffy) tensor rules built from a
Gauss-Jacobi rule in the collapsed direction and Gauss-Legendre in the other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from .mesh import Mesh

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference simplex.

    ``bary`` holds barycentric coordinates ``(n_points, dim + 1)``; weights sum
    to the reference measure (1 for the unit interval, 1/2 for the unit
    triangle).
    """

    dim: int
    degree: int
    bary: np.ndarray
    weights: np.ndarray

    @property
    def points(self) -> np.ndarray:
        """Cartesian reference coordinates (drop the first barycentric)."""
        return self.bary[:, 1:]


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Return a rule exact for polynomials of total degree ``<= degree``."""
    if dim not in (0, 1, 2):
        raise ValueError(f"unsupported dimension {dim}")
    if int(degree) != degree or not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (0..{MAX_DEGREE})")
    degree = int(degree)
    if dim == 0:
        return QuadratureRule(0, degree, np.ones((1, 1)), np.ones(1))
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    s, ws = (x + 1) / 2, w / 2
    if dim == 1:
        return QuadratureRule(1, degree, np.column_stack([1 - s, s]), ws)
    # integrate g((1-t) s, t) (1 - t) over the unit square
    xi, wj = roots_jacobi(n, 1.0, 0.0)
    t, wt = (xi + 1) / 2, wj / 4
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    px, py = ((1 - T) * S).ravel(), T.ravel()
    bary = np.column_stack([1 - px - py, px, py])
    return QuadratureRule(2, degree, bary, W.ravel())


@dataclass(frozen=True)
class QuadraturePoints:
    """Physical quadrature points on a mesh.

    Attributes
    ----------
    cells : owning cell of each point
    bary : barycentric coordinates of each point in its cell
    weights : physical weights (include the cell or facet measure)
    x : physical coordinates
    normals : outward unit normals for boundary point sets, else ``None``
    facets : boundary facet index per point for boundary point sets
    """

    cells: np.ndarray
    bary: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    normals: np.ndarray | None = None
    facets: np.ndarray | None = None

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values)))


def volume_points(mesh: Mesh, degree: int) -> QuadraturePoints:
    rule = quadrature_rule(mesh.dim, degree)
    nq = len(rule.weights)
    cells = np.repeat(np.arange(mesh.n_cells), nq)
    bary = np.tile(rule.bary, (mesh.n_cells, 1))
    scale = mesh.cell_volumes / rule.weights.sum()
    weights = (scale[:, None] * rule.weights[None, :]).ravel()
    x = np.einsum("pi,pid->pd", bary, mesh.vertices[mesh.cells[cells]])
    return QuadraturePoints(cells, bary, weights, x)


def boundary_points(mesh: Mesh, tag: str, degree: int) -> QuadraturePoints:
    """Points on the boundary facets carrying ``tag``."""
    fidx = mesh.facets_with_tag(tag)
    rule = quadrature_rule(mesh.dim - 1, degree)
    nq = len(rule.weights)
    fcells = mesh.facet_cells[fidx]
    # local position of each facet vertex inside its cell
    loc = np.array(
        [[int(np.flatnonzero(mesh.cells[c] == v)[0]) for v in mesh.facets[f]] for f, c in zip(fidx, fcells)]
    )
    npts = len(fidx) * nq
    bary = np.zeros((npts, mesh.dim + 1))
    rows = np.arange(npts)
    for j in range(mesh.dim):
        bary[rows, np.repeat(loc[:, j], nq)] = np.tile(rule.bary[:, j], len(fidx))
    meas = mesh.facet_measures(mesh.facets[fidx]) / rule.weights.sum()
    weights = (meas[:, None] * rule.weights[None, :]).ravel()
    cells = np.repeat(fcells, nq)
    x = np.einsum("pi,pid->pd", bary, mesh.vertices[mesh.cells[cells]])
    normals = np.repeat(mesh.facet_normals(fidx), nq, axis=0)
    return QuadraturePoints(cells, bary, weights, x, normals, np.repeat(fidx, nq))


def _reference_children(dim: int, n: int) -> np.ndarray:
    """Vertices (in reference barycentrics) of a uniform ``n``-fold split of the simplex."""
    if dim == 1:
        t = np.linspace(0.0, 1.0, n + 1)
        pts = np.stack([np.column_stack([1 - t[:-1], t[:-1]]), np.column_stack([1 - t[1:], t[1:]])], axis=1)
        return pts
    kids = []
    for i in range(n):
        for j in range(n - i):
            a, b, c = (i, j), (i + 1, j), (i, j + 1)
            kids.append([a, b, c])
            if i + j < n - 1:
                kids.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
    xy = np.array(kids, dtype=float) / n  # (nk, 3, 2)
    return np.concatenate([1 - xy.sum(axis=2, keepdims=True), xy], axis=2)


def composite_points(mesh: Mesh, degree: int, refine: np.ndarray | None = None, n_split: int = 8) -> QuadraturePoints:
    """Volume points with cells flagged in ``refine`` integrated by a split rule.

    Useful for data with jumps inside cells; unflagged cells use the plain
    rule of the requested degree.
    """
    base = volume_points(mesh, degree)
    if refine is None or not np.any(refine):
        return base
    refine = np.asarray(refine, dtype=bool)
    rule = quadrature_rule(mesh.dim, degree)
    kids = _reference_children(mesh.dim, n_split)  # (nk, d+1, d+1)
    sub_bary = np.einsum("qi,kij->kqj", rule.bary, kids).reshape(-1, mesh.dim + 1)
    sub_w = np.tile(rule.weights, len(kids)) / len(kids)
    keep = ~refine[base.cells]
    cells_r = np.flatnonzero(refine)
    nq = len(sub_w)
    cells = np.concatenate([base.cells[keep], np.repeat(cells_r, nq)])
    bary = np.vstack([base.bary[keep], np.tile(sub_bary, (len(cells_r), 1))])
    scale = mesh.cell_volumes[cells_r] / rule.weights.sum()
    weights = np.concatenate([base.weights[keep], (scale[:, None] * sub_w[None, :]).ravel()])
    x = np.einsum("pi,pid->pd", bary, mesh.vertices[mesh.cells[cells]])
    return QuadraturePoints(cells, bary, weights, x)

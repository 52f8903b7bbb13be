"""Finite element spaces, dof maps, interpolation and point evaluation.

Families
--------
``P1``              continuous piecewise linears, one dof per vertex
``P1Bubble``        P1 enriched by the cubic bubble of each triangle (or the
                    quadratic bubble of each interval)
``P0Broken``        piecewise constants
``BoundaryP1Zero``  continuous piecewise linears on the facets carrying a tag,
                    vanishing at the ends of the tagged boundary

Scalar dofs are numbered vertices first (then cells for bubbles); vector
spaces interleave components, so component ``c`` of scalar dof ``i`` is
``i * m + c``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, Mesh
from .quadrature import QuadraturePoints, QuadratureRule, quadrature_rule  # noqa: F401

FAMILIES = ("P1", "P1Bubble", "P0Broken", "BoundaryP1Zero")


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    """A finite element space on a mesh.

    Attributes
    ----------
    fixed_dofs : indices of constrained dofs (sorted)
    fixed_values : prescribed values of the constrained dofs
    """

    mesh: Mesh
    family: str
    multiplicity: int = 1
    tag: str | None = None
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_scalar_dofs(self) -> int:
        m = self.mesh
        return {
            "P1": m.n_vertices,
            "P1Bubble": m.n_vertices + m.n_cells,
            "P0Broken": m.n_cells,
            "BoundaryP1Zero": len(self.boundary_vertices) if self.tag else 0,
        }[self.family]

    @property
    def n_dofs(self) -> int:
        return self.n_scalar_dofs * self.multiplicity

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)

    @property
    def is_continuous(self) -> bool:
        return self.family != "P0Broken"

    @property
    def boundary_vertices(self) -> np.ndarray:
        """Mesh vertices carrying the dofs of a ``BoundaryP1Zero`` space."""
        return self.mesh.tag_interior_vertices(self.tag)

    # -- tabulation ----------------------------------------------------------
    def tabulate(self, cells, bary, grad: bool = False):
        """Scalar basis values (or gradients) at points given per cell.

        Returns a sparse ``(n_points, n_scalar_dofs)`` matrix, or a list of
        ``dim`` such matrices when ``grad`` is true.  ``BoundaryP1Zero`` may
        only be tabulated at points on its tagged facets and has no
        gradient.
        """
        cells = np.asarray(cells, dtype=np.int64)
        bary = np.asarray(bary, dtype=float)
        m = self.mesh
        npts, d = len(cells), m.dim
        nsd = self.n_scalar_dofs
        pts = np.arange(npts)
        if self.family == "P0Broken":
            if grad:
                return [sp.csr_matrix((npts, nsd)) for _ in range(d)]
            return sp.csr_matrix((np.ones(npts), (pts, cells)), shape=(npts, nsd))

        verts = m.cells[cells]  # (npts, d+1)
        rows = np.repeat(pts, d + 1)
        if self.family == "BoundaryP1Zero":
            if grad:
                raise ValueError("boundary space has no volume gradient")
            lookup = np.full(m.n_vertices, -1, dtype=np.int64)
            lookup[self.boundary_vertices] = np.arange(len(self.boundary_vertices))
            cols = lookup[verts].ravel()
            keep = cols >= 0
            return sp.csr_matrix(
                (bary.ravel()[keep], (rows[keep], cols[keep])), shape=(npts, nsd)
            )

        if not grad:
            vals = [bary.ravel()]
            r, c = [rows], [verts.ravel()]
            if self.family == "P1Bubble":
                vals.append(np.prod(bary, axis=1))
                r.append(pts)
                c.append(m.n_vertices + cells)
            return sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(r), np.concatenate(c))), shape=(npts, nsd)
            )

        G = m.barycentric_gradients[cells]  # (npts, d+1, d)
        out = []
        for k in range(d):
            vals = [G[:, :, k].ravel()]
            r, c = [rows], [verts.ravel()]
            if self.family == "P1Bubble":
                # d/dx prod(lambda) = sum_j prod_{i != j} lambda_i * dlambda_j
                gb = np.zeros(npts)
                for j in range(d + 1):
                    others = np.prod(np.delete(bary, j, axis=1), axis=1)
                    gb += others * G[:, j, k]
                vals.append(gb)
                r.append(pts)
                c.append(m.n_vertices + cells)
            out.append(
                sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(r), np.concatenate(c))), shape=(npts, nsd)
                )
            )
        return out

    def component(self, scalar: sp.spmatrix, c: int) -> sp.csr_matrix:
        """Lift a scalar tabulation to component ``c`` of this (vector) space."""
        if self.multiplicity == 1:
            return sp.csr_matrix(scalar)
        P = sp.csr_matrix(
            (
                np.ones(self.n_scalar_dofs),
                (np.arange(self.n_scalar_dofs), np.arange(self.n_scalar_dofs) * self.multiplicity + c),
            ),
            shape=(self.n_scalar_dofs, self.n_dofs),
        )
        return sp.csr_matrix(scalar @ P)

    def dof_coordinates(self) -> np.ndarray:
        """Coordinates of the nodal point of each scalar dof."""
        m = self.mesh
        if self.family == "P1":
            return m.vertices
        if self.family == "P1Bubble":
            return np.vstack([m.vertices, m.centroids])
        if self.family == "P0Broken":
            return m.centroids
        return m.vertices[self.boundary_vertices]

    def cell_dofs(self) -> np.ndarray:
        """Global scalar dof indices per cell (boundary spaces excluded)."""
        m = self.mesh
        if self.family == "P1":
            return m.cells
        if self.family == "P1Bubble":
            return np.column_stack([m.cells, m.n_vertices + np.arange(m.n_cells)])
        if self.family == "P0Broken":
            return np.arange(m.n_cells)[:, None]
        raise ValueError("boundary space has no cell dof map")


def build_space(
    mesh: Mesh,
    family: str,
    multiplicity: int = 1,
    tag: str | None = None,
    dirichlet: tuple | None = (DIRICHLET,),
    dirichlet_value: Callable | float = 0.0,
) -> FunctionSpace:
    """Construct a function space.

    Parameters
    ----------
    family : one of ``P1``, ``P1Bubble``, ``P0Broken``, ``BoundaryP1Zero``
    multiplicity : 1, or 2 for vector P1 on a 2D mesh
    tag : boundary tag of a ``BoundaryP1Zero`` space
    dirichlet : tags of facets whose vertex dofs are constrained (continuous
        volume families only); ``None`` or empty for no constraints
    dirichlet_value : constant or callable of vertex coordinates giving the
        prescribed values (scalar spaces)
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if multiplicity not in (1, 2):
        raise ValueError("multiplicity must be 1 or 2")
    if multiplicity == 2 and (family != "P1" or mesh.dim != 2):
        raise ValueError("vector multiplicity is only available for P1 on 2D meshes")
    if family == "BoundaryP1Zero":
        if tag is None:
            raise ValueError("BoundaryP1Zero needs a boundary tag")
        mesh.facets_with_tag(tag)  # raises on unknown tag
        return FunctionSpace(mesh, family, 1, tag)
    fixed = np.empty(0, dtype=np.int64)
    values = np.empty(0)
    if dirichlet and family in ("P1", "P1Bubble"):
        verts = np.unique(np.concatenate([mesh.vertices_with_tag(t) for t in dirichlet]))
        if callable(dirichlet_value):
            vv = np.asarray(dirichlet_value(mesh.vertices[verts]), dtype=float).reshape(len(verts), -1)
        else:
            vv = np.full((len(verts), multiplicity), float(dirichlet_value))
        vv = np.broadcast_to(vv, (len(verts), multiplicity))
        fixed = (verts[:, None] * multiplicity + np.arange(multiplicity)[None, :]).ravel()
        values = vv.ravel().astype(float)
        order = np.argsort(fixed)
        fixed, values = fixed[order], values[order]
    return FunctionSpace(mesh, family, multiplicity, None, fixed, values)


@dataclass(eq=False)
class FeFunction:
    """Coefficient vector attached to a space."""

    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(
                f"expected {self.space.n_dofs} coefficients, got {self.coefficients.shape}"
            )

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coefficients.copy())

    def at(self, cells, bary, grad: bool = False) -> np.ndarray:
        """Values (n_points[, m]) or gradients (n_points[, m], dim) at cell points."""
        sp_ = self.space
        tab = sp_.tabulate(cells, bary, grad=grad)
        tabs = tab if grad else [tab]
        m = sp_.multiplicity
        out = []
        for T in tabs:
            comps = [sp_.component(T, c) @ self.coefficients for c in range(m)]
            out.append(np.column_stack(comps) if m > 1 else comps[0])
        return np.stack(out, axis=-1) if grad else out[0]

    def __call__(self, points, grad: bool = False):
        return evaluate(self, points, grad=grad)


def _call(f, x: np.ndarray, m: int) -> np.ndarray:
    if callable(f):
        v = np.asarray(f(x), dtype=float)
    else:
        v = np.asarray(f, dtype=float)
    return np.broadcast_to(v, (len(x), m) if m > 1 else (len(x),)).astype(float)


def interpolate(space: FunctionSpace, f) -> FeFunction:
    """Nodal interpolation; bubble dofs are set to zero.

    ``f`` is a constant or a vectorised callable of an ``(n, dim)`` array.
    Constrained dofs keep their prescribed values only if ``f`` agrees; no
    overwrite happens here.
    """
    m = space.multiplicity
    if space.family == "P1Bubble":
        vals = _call(f, space.mesh.vertices, m)
        nb = space.mesh.n_cells
        vals = np.concatenate([vals, np.zeros((nb, m) if m > 1 else nb)])
    else:
        vals = _call(f, space.dof_coordinates(), m)
    return FeFunction(space, np.asarray(vals).reshape(-1))


def evaluate(f: FeFunction, points, grad: bool = False) -> np.ndarray:
    """Evaluate a function (or its gradient) at physical points.

    Raises ``ValueError`` if a point is outside the mesh.
    """
    mesh = f.space.mesh
    cells, bary = mesh.locate(np.asarray(points, dtype=float).reshape(-1, mesh.dim))
    return f.at(cells, bary, grad=grad)


def restrict_free(space: FunctionSpace, coefficients: np.ndarray) -> np.ndarray:
    return np.asarray(coefficients)[space.free_dofs]


def extend_free(space: FunctionSpace, free_values: np.ndarray) -> np.ndarray:
    full = np.zeros(space.n_dofs)
    full[space.fixed_dofs] = space.fixed_values
    full[space.free_dofs] = free_values
    return full


def write_function(f: FeFunction, path, mesh_file: str | None = None) -> list:
    """Write ``dof,coefficient`` CSV plus a JSON sidecar; return the paths."""
    path = Path(path)
    rows = ["dof,coefficient"] + [f"{i},{c!r}" for i, c in enumerate(f.coefficients.tolist())]
    path.write_text("\n".join(rows) + "\n")
    side = path.with_suffix(".json")
    meta = {
        "family": f.space.family,
        "multiplicity": f.space.multiplicity,
        "tag": f.space.tag,
        "n_dofs": f.space.n_dofs,
        "mesh_file": mesh_file,
    }
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [path, side]


def read_coefficients(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.zeros(len(data))
    out[data[:, 0].astype(int)] = data[:, 1]
    return out

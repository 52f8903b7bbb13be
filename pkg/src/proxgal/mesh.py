"""Conforming simplicial meshes of intervals and triangles.

A :class:`Mesh` stores vertex coordinates, cell connectivity and an explicit
list of tagged boundary facets.  Everything else (volumes, diameters, vertex
patches, edge lists) is derived lazily and cached.  Meshes are immutable once
built; all constructors return new objects.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

DIRICHLET = "dirichlet"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh in one or two space dimensions.

    Parameters
    ----------
    vertices : (n_vertices, dim) array
    cells : (n_cells, dim + 1) integer array, counter-clockwise in 2D
    facets : (n_facets, dim) integer array of boundary facets
    facet_tags : sequence of str, one tag per boundary facet
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: tuple = field(default=())

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] == 1 and np.ndim(self.vertices) == 1:
            v = v.T
        c = np.asarray(self.cells, dtype=np.int64)
        f = np.asarray(self.facets, dtype=np.int64).reshape(-1, v.shape[1])
        tags = tuple(str(t) for t in self.facet_tags)
        if not tags:
            tags = (DIRICHLET,) * len(f)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "facets", f)
        object.__setattr__(self, "facet_tags", tags)
        for arr in (v, c, f):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        dim = self.dim
        if dim not in (1, 2):
            raise ValueError(f"only 1D and 2D meshes are supported, got dim={dim}")
        if self.cells.ndim != 2 or self.cells.shape[1] != dim + 1:
            raise ValueError("cells must have dim + 1 vertices each")
        if self.cells.min() < 0 or self.cells.max() >= self.n_vertices:
            raise ValueError("cell vertex index out of range")
        s = np.sort(self.cells, axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise ValueError("cell with repeated vertex")
        if np.any(self.signed_volumes <= 0):
            bad = int(np.argmin(self.signed_volumes))
            raise ValueError(f"cell {bad} has non-positive measure (orientation)")
        if len(self.facet_tags) != len(self.facets):
            raise ValueError("one tag per boundary facet required")
        # every listed facet must be a face of exactly one cell, and the
        # listed facets must cover all faces seen only once
        faces, owners = self._faces()
        keys, counts = np.unique(faces, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("non-conforming mesh: face shared by more than two cells")
        boundary = {tuple(k) for k, n in zip(keys, counts) if n == 1}
        listed = [tuple(sorted(fc)) for fc in self.facets]
        if len(set(listed)) != len(listed):
            raise ValueError("duplicate boundary facet")
        if set(listed) != boundary:
            raise ValueError("boundary facet list does not match the mesh boundary")

    # -- basic sizes -----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    # -- geometry ----------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        """(n_cells, dim, dim) with columns ``v_i - v_0``."""
        x = self.vertices[self.cells]
        return np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        d = np.linalg.det(self.jacobians) if self.dim > 1 else self.jacobians[:, 0, 0]
        return d / (1.0 if self.dim == 1 else 2.0)

    @property
    def cell_volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(n_cells, dim + 1, dim) constant gradients of the barycentric coordinates."""
        inv = np.linalg.inv(self.jacobians)  # rows are grad(lambda_1..lambda_dim)
        g = np.empty((self.n_cells, self.dim + 1, self.dim))
        g[:, 1:, :] = inv
        g[:, 0, :] = -inv.sum(axis=1)
        return g

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        h = np.zeros(self.n_cells)
        for i in range(self.dim + 1):
            for j in range(i + 1, self.dim + 1):
                h = np.maximum(h, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return h

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    def facet_measures(self, facets=None) -> np.ndarray:
        f = self.facets if facets is None else np.asarray(facets)
        if self.dim == 1:
            return np.ones(len(f))
        x = self.vertices[f]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    def facet_normals(self, facets=None) -> np.ndarray:
        """Outward unit normals of boundary facets."""
        idx = np.arange(self.n_facets) if facets is None else np.asarray(facets)
        f = self.facets[idx]
        cells = self.facet_cells[idx]
        inward = self.centroids[cells] - self.vertices[f].mean(axis=1)
        if self.dim == 1:
            return -np.sign(inward)
        t = self.vertices[f[:, 1]] - self.vertices[f[:, 0]]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        flip = np.einsum("ij,ij->i", n, inward) > 0
        n[flip] *= -1
        return n

    # -- topology ------------------------------------------------------------
    def _faces(self):
        d = self.dim
        faces, owners = [], []
        for drop in range(d + 1):
            keep = [i for i in range(d + 1) if i != drop]
            faces.append(np.sort(self.cells[:, keep], axis=1))
            owners.append(np.arange(self.n_cells))
        return np.vstack(faces), np.concatenate(owners)

    @cached_property
    def vertex_to_cell(self) -> sp.csr_matrix:
        """Incidence matrix with a one at (vertex, cell) for every cell vertex."""
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), self.dim + 1)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_vertices, self.n_cells)
        )

    def patch(self, z: int) -> np.ndarray:
        """Indices of the cells containing vertex ``z``."""
        m = self.vertex_to_cell
        return m.indices[m.indptr[z] : m.indptr[z + 1]]

    @cached_property
    def facet_cells(self) -> np.ndarray:
        """Index of the unique cell owning each boundary facet."""
        faces, owners = self._faces()
        lookup = {tuple(fc): o for fc, o in zip(map(tuple, faces), owners)}
        return np.array([lookup[tuple(sorted(fc))] for fc in self.facets], dtype=np.int64)

    @cached_property
    def edges(self) -> np.ndarray:
        """(n_edges, 2) sorted vertex pairs (cells themselves in 1D)."""
        if self.dim == 1:
            return np.sort(self.cells, axis=1)
        e = np.vstack([self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.facets)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_vertices), self.boundary_vertices)

    @property
    def tags(self) -> tuple:
        return tuple(sorted(set(self.facet_tags)))

    def facets_with_tag(self, tag: str) -> np.ndarray:
        idx = np.array([i for i, t in enumerate(self.facet_tags) if t == tag], dtype=np.int64)
        if idx.size == 0:
            raise KeyError(f"no boundary facets tagged {tag!r}")
        return idx

    def vertices_with_tag(self, tag: str) -> np.ndarray:
        return np.unique(self.facets[self.facets_with_tag(tag)])

    def tag_interior_vertices(self, tag: str) -> np.ndarray:
        """Vertices on ``tag`` facets that touch no facet with another tag."""
        on = self.vertices_with_tag(tag)
        other = [i for i, t in enumerate(self.facet_tags) if t != tag]
        shared = np.unique(self.facets[other]) if other else np.empty(0, dtype=np.int64)
        return np.setdiff1d(on, shared)

    # -- point location ------------------------------------------------------
    @cached_property
    def _buckets(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        nb = max(1, int(round(self.n_cells ** (1.0 / self.dim))))
        size = np.where(hi > lo, (hi - lo) / nb, 1.0)
        x = self.vertices[self.cells]
        cmin = np.floor((x.min(axis=1) - lo) / size - 1e-9).astype(int).clip(0, nb - 1)
        cmax = np.floor((x.max(axis=1) - lo) / size + 1e-9).astype(int).clip(0, nb - 1)
        table: dict = {}
        for c in range(self.n_cells):
            ranges = [range(cmin[c, k], cmax[c, k] + 1) for k in range(self.dim)]
            for key in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(self.dim, -1).T:
                table.setdefault(tuple(key), []).append(c)
        return lo, size, nb, table

    def barycentric(self, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points[i]`` with respect to ``cells[i]``."""
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        inv = np.linalg.inv(self.jacobians[cells])
        v0 = self.vertices[self.cells[cells, 0]]
        lam = np.einsum("nij,nj->ni", inv, points - v0)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points, tol: float = 1e-12):
        """Find a containing cell and barycentric coordinates for each point.

        Raises ``ValueError`` if a point lies outside the mesh.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        lo, size, nb, table = self._buckets
        keys = np.floor((pts - lo) / size).astype(int).clip(0, nb - 1)
        cells = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), self.dim + 1))
        pidx, cidx = [], []
        for i, key in enumerate(map(tuple, keys)):
            cand = table.get(key, ())
            pidx.extend([i] * len(cand))
            cidx.extend(cand)
        pidx = np.asarray(pidx, dtype=np.int64)
        cidx = np.asarray(cidx, dtype=np.int64)
        if pidx.size:
            lam = self.barycentric(cidx, pts[pidx])
            ok = lam.min(axis=1) >= -tol
            # keep the first admissible candidate per point
            for p, c, l in zip(pidx[ok][::-1], cidx[ok][::-1], lam[ok][::-1]):
                cells[p] = c
                bary[p] = l
        if np.any(cells < 0):
            bad = pts[np.argmax(cells < 0)]
            raise ValueError(f"point {bad} lies outside the mesh")
        return cells, bary


# -- constructors ---------------------------------------------------------------


def unit_interval_mesh(n: int) -> Mesh:
    """Uniform mesh of [0, 1] with ``n`` cells; both endpoints tagged dirichlet."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)[:, None]
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x, cells, np.array([[0], [n]]), (DIRICHLET, DIRICHLET))


def unit_square_mesh(n: int, pattern: str = "crisscross") -> Mesh:
    """Structured ``n x n`` mesh of the unit square.

    ``crisscross`` splits each square into four triangles about its centre,
    ``diagonal`` into two along the lower-left to upper-right diagonal.
    All boundary facets are tagged dirichlet.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if pattern not in ("crisscross", "diagonal"):
        raise ValueError(f"unknown pattern {pattern!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = [np.column_stack([X.ravel(), Y.ravel()])]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    if pattern == "crisscross":
        centre = (n + 1) ** 2 + np.arange(n * n)
        verts.append(np.column_stack([(t[i] + t[i + 1]) / 2, (t[j] + t[j + 1]) / 2]))
        cells = np.vstack(
            [
                np.column_stack([v00, v10, centre]),
                np.column_stack([v10, v11, centre]),
                np.column_stack([v11, v01, centre]),
                np.column_stack([v01, v00, centre]),
            ]
        )
    else:
        cells = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    k = np.arange(n)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([k * (n + 1) + n, (k + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + k + 1, n * (n + 1) + k])
    left = np.column_stack([(k + 1) * (n + 1), k * (n + 1)])
    facets = np.vstack([bottom, right, top, left])
    return Mesh(np.vstack(verts), cells, facets, (DIRICHLET,) * len(facets))


def retag(mesh: Mesh, rules: Mapping[str, Callable[[np.ndarray], bool]]) -> Mesh:
    """Return a copy whose facets are retagged by midpoint predicates.

    ``rules`` maps a tag to a predicate of the facet midpoint; the first
    matching rule wins, unmatched facets keep their tag.
    """
    mids = mesh.vertices[mesh.facets].mean(axis=1)
    tags = list(mesh.facet_tags)
    for k, m in enumerate(mids):
        for tag, pred in rules.items():
            if pred(m):
                tags[k] = tag
                break
    return Mesh(mesh.vertices, mesh.cells, mesh.facets, tuple(tags))


def uniform_refine(mesh: Mesh) -> Mesh:
    """Bisect every interval / split every triangle into four by edge midpoints."""
    nv = mesh.n_vertices
    if mesh.dim == 1:
        mid = nv + np.arange(mesh.n_cells)
        verts = np.vstack([mesh.vertices, mesh.centroids])
        cells = np.vstack(
            [np.column_stack([mesh.cells[:, 0], mid]), np.column_stack([mid, mesh.cells[:, 1]])]
        )
        return Mesh(verts, cells, mesh.facets, mesh.facet_tags)
    edges = mesh.edges
    index = {tuple(e): nv + k for k, e in enumerate(edges)}
    verts = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])

    def m(a, b):
        return np.array([index[(min(x, y), max(x, y))] for x, y in zip(a, b)], dtype=np.int64)

    c = mesh.cells
    m01, m12, m20 = m(c[:, 0], c[:, 1]), m(c[:, 1], c[:, 2]), m(c[:, 2], c[:, 0])
    cells = np.vstack(
        [
            np.column_stack([c[:, 0], m01, m20]),
            np.column_stack([m01, c[:, 1], m12]),
            np.column_stack([m20, m12, c[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ]
    )
    fm = m(mesh.facets[:, 0], mesh.facets[:, 1])
    facets = np.vstack(
        [np.column_stack([mesh.facets[:, 0], fm]), np.column_stack([fm, mesh.facets[:, 1]])]
    )
    return Mesh(verts, cells, facets, tuple(mesh.facet_tags) * 2)


# -- structural checks ------------------------------------------------------------


class SymmetryReport(NamedTuple):
    deviation: float
    passed: bool


def check_local_symmetry(mesh: Mesh, rtol: float = 1e-12) -> SymmetryReport:
    """Largest distance between an interior vertex and its patch's volume-weighted centroid.

    Passes when every deviation is below ``rtol`` times the local patch
    diameter.  Meshes without interior vertices pass vacuously.
    """
    vol = mesh.cell_volumes
    m = mesh.vertex_to_cell
    weighted = m @ (vol[:, None] * mesh.centroids)
    total = m @ vol
    interior = mesh.interior_vertices
    if interior.size == 0:
        return SymmetryReport(0.0, True)
    dev = np.linalg.norm(weighted[interior] / total[interior, None] - mesh.vertices[interior], axis=1)
    hmax = sp.csr_matrix(m.multiply(mesh.cell_diameters[None, :])).max(axis=1).toarray().ravel()
    ok = dev <= rtol * hmax[interior]
    return SymmetryReport(float(dev.max()), bool(ok.all()))


def check_signorini_facets(mesh: Mesh, contact_tag: str = "contact") -> bool:
    """Check the contact-boundary mesh condition used by the Signorini enrichment.

    The contact boundary must be a straight chain of at least two facets and,
    at each of its two end vertices, the facet touching the end must not be
    shorter than its neighbour.
    """
    idx = mesh.facets_with_tag(contact_tag)
    if mesh.dim != 2:
        raise ValueError("contact facet check needs a 2D mesh")
    if idx.size < 2:
        log.info("contact boundary has %d facet(s); need at least two", idx.size)
        return False
    chain = _facet_chain(mesh, idx)
    if chain is None:
        log.info("contact facets do not form a single chain")
        return False
    pts = mesh.vertices[chain]
    d = pts[-1] - pts[0]
    cross = d[0] * (pts[:, 1] - pts[0, 1]) - d[1] * (pts[:, 0] - pts[0, 0])
    if np.abs(cross).max() > 1e-12 * max(1.0, float(np.dot(d, d))):
        log.info("contact boundary is not a straight segment")
        return False
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if lengths[0] < lengths[1] * (1 - 1e-12) or lengths[-1] < lengths[-2] * (1 - 1e-12):
        log.info("end facet shorter than its neighbour on the contact boundary")
        return False
    return True


def contact_chain(mesh: Mesh, contact_tag: str = "contact") -> np.ndarray:
    """Ordered vertex chain along the facets carrying ``contact_tag``."""
    chain = _facet_chain(mesh, mesh.facets_with_tag(contact_tag))
    if chain is None:
        raise ValueError(f"facets tagged {contact_tag!r} do not form a single chain")
    return chain


def _facet_chain(mesh: Mesh, idx: np.ndarray):
    f = mesh.facets[idx]
    nbr: dict = {}
    for a, b in f:
        nbr.setdefault(a, []).append(b)
        nbr.setdefault(b, []).append(a)
    ends = [v for v, n in nbr.items() if len(n) == 1]
    if len(ends) != 2 or any(len(n) > 2 for n in nbr.values()):
        return None
    chain = [min(ends)]
    prev = -1
    while True:
        nxt = [v for v in nbr[chain[-1]] if v != prev]
        if not nxt:
            break
        prev = chain[-1]
        chain.append(nxt[0])
    if len(chain) != len(nbr):
        return None
    return np.asarray(chain, dtype=np.int64)


def shape_regularity(mesh: Mesh) -> float:
    """Largest ratio of cell diameter to inradius."""
    h = mesh.cell_diameters
    if mesh.dim == 1:
        rho = h / 2
    else:
        x = mesh.vertices[mesh.cells]
        perim = sum(np.linalg.norm(x[:, i] - x[:, (i + 1) % 3], axis=1) for i in range(3))
        rho = 2 * mesh.cell_volumes / perim
    if np.any(rho <= 1e-14 * h):
        raise ValueError("degenerate cell")
    return float(np.max(h / rho))


# -- plain-text format -----------------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``dim n_vertices n_cells n_bfacets`` then vertices, cells, tagged facets."""
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {mesh.n_facets}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [
        " ".join(str(int(i)) for i in f) + f" {t}" for f, t in zip(mesh.facets, mesh.facet_tags)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = Path(path).read_text().split("\n")
    dim, nv, nc, nb = (int(s) for s in rows[0].split())
    p = 1
    verts = np.array([[float(s) for s in rows[p + k].split()] for k in range(nv)]).reshape(nv, dim)
    p += nv
    cells = np.array([[int(s) for s in rows[p + k].split()] for k in range(nc)], dtype=np.int64)
    p += nc
    facets, tags = [], []
    for k in range(nb):
        parts = rows[p + k].split()
        facets.append([int(s) for s in parts[:dim]])
        tags.append(parts[dim])
    return Mesh(verts, cells, np.array(facets, dtype=np.int64).reshape(nb, dim), tuple(tags))

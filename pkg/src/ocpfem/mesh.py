"""Uniform simplicial meshes of intervals, squares and cubes.

Box meshes use the Freudenthal (Kuhn) subdivision: every grid cell is split
into ``d!`` simplices whose edges all point in non-negative coordinate
directions.  Halving the cell size of such a mesh is exactly its regular
(red) refinement, which is what :func:`refine_uniform` relies on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp

from .sparsela import text_sink


class MeshError(ValueError):
    """Invalid mesh parameters or malformed mesh data."""


class UnsupportedDimensionError(MeshError):
    """Operation not available in the requested space dimension."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with Dirichlet flags on every boundary node.

    ``grid`` is ``(a, b, n)`` for meshes built on a uniform tensor grid; it
    enables structured shortcuts (stencil assembly, refinement).
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_mask: np.ndarray
    grid: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(np.asarray(self.nodes, float).reshape(-1, self.dim)))
        object.__setattr__(self, "elements", _frozen(np.asarray(self.elements)))
        object.__setattr__(self, "boundary_mask", _frozen(np.asarray(self.boundary_mask, bool)))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of the free (non-Dirichlet) nodes, ascending."""
        return _frozen(np.flatnonzero(~self.boundary_mask))

    @property
    def n_interior(self) -> int:
        return self.interior.size

    def jacobians(self, ids=None) -> np.ndarray:
        """Edge matrices [x_1 - x_0, ..., x_d - x_0] (as columns) of the given elements."""
        el = self.elements if ids is None else self.elements[ids]
        v = self.nodes[el]
        return (v[:, 1:, :] - v[:, :1, :]).transpose(0, 2, 1)

    @cached_property
    def measures(self) -> np.ndarray:
        """Element volumes |tau|."""
        out = np.empty(self.n_elements)
        for ids in _chunks(self.n_elements):
            J = self.jacobians(ids)
            det = np.linalg.det(J) if self.dim > 1 else J[:, 0, 0]
            out[ids] = np.abs(det) / factorial(self.dim)
        return _frozen(out)

    @cached_property
    def element_size(self) -> np.ndarray:
        """Element diameters h_tau (longest edge)."""
        h = np.zeros(self.n_elements)
        for ids in _chunks(self.n_elements):
            v = self.nodes[self.elements[ids]]
            for i, j in itertools.combinations(range(self.dim + 1), 2):
                h[ids] = np.maximum(h[ids], np.linalg.norm(v[:, i] - v[:, j], axis=1))
        return _frozen(h)

    @property
    def global_h(self) -> float:
        return float(self.element_size.max())

    @property
    def cell_size(self) -> float:
        """Grid spacing (b - a)/n of a structured mesh; diameter otherwise."""
        if self.grid is None:
            return self.global_h
        a, b, n = self.grid
        return (b - a) / n

    @property
    def volume(self) -> float:
        return float(self.measures.sum())

    def extend(self, values_interior: np.ndarray) -> np.ndarray:
        """Nodal vector on all nodes from interior values (zero on the boundary)."""
        full = np.zeros(self.n_nodes)
        full[self.interior] = values_interior
        return full

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f`` (callable on an (N, d) array)."""
        return np.asarray(f(self.nodes), float)

    def edges(self) -> np.ndarray:
        """Unique sorted node pairs of all element edges."""
        pairs = [self.elements[:, [i, j]] for i, j in itertools.combinations(range(self.dim + 1), 2)]
        e = np.sort(np.concatenate(pairs), axis=1)
        return np.unique(e, axis=0)

    def check(self) -> None:
        """Raise :class:`MeshError` if a structural invariant fails."""
        el = self.elements
        if el.min() < 0 or el.max() >= self.n_nodes:
            raise MeshError("element node index out of range")
        s = np.sort(el, axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise MeshError("element with repeated node")
        if np.any(self.measures <= 0):
            raise MeshError("degenerate element")
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        bn = self.nodes[self.boundary_mask]
        on_face = np.isclose(bn, lo) | np.isclose(bn, hi)
        if not np.all(on_face.any(axis=1)):
            raise MeshError("boundary node not on the domain boundary")


def _chunks(n: int, size: int = 500_000):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _kuhn_simplices(d: int) -> list[list[tuple[int, ...]]]:
    """Vertex offsets of the d! Kuhn simplices of the unit cube."""
    out = []
    for perm in itertools.permutations(range(d)):
        v = [0] * d
        verts = [tuple(v)]
        for axis in perm:
            v[axis] = 1
            verts.append(tuple(v))
        out.append(verts)
    return out


def _grid_index(idx, n1: int) -> np.ndarray:
    """Lexicographic flat index of grid multi-indices (first axis slowest)."""
    flat = np.zeros_like(idx[0])
    for i in idx:
        flat = flat * n1 + i
    return flat


def uniform_interval_mesh(a: float, b: float, n: int) -> Mesh:
    """Equidistant mesh of (a, b) with n cells."""
    if n < 1:
        raise MeshError(f"need at least one cell, got n={n}")
    if not a < b:
        raise MeshError(f"empty interval ({a}, {b})")
    x = a + (b - a) * np.arange(n + 1) / n
    x[-1] = b
    el = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    bnd = np.zeros(n + 1, bool)
    bnd[[0, -1]] = True
    return Mesh(1, x[:, None], el, bnd, grid=(float(a), float(b), int(n)))


def uniform_box_mesh(a: float, b: float, n: int, d: int) -> Mesh:
    """Freudenthal mesh of (a, b)^d with n cells per axis.

    d=2 gives 2 n^2 triangles, d=3 gives 6 n^3 tetrahedra.
    """
    if d == 1:
        return uniform_interval_mesh(a, b, n)
    if d not in (2, 3):
        raise UnsupportedDimensionError(f"box meshes exist for d in {{1,2,3}}, got d={d}")
    if n < 1:
        raise MeshError(f"need at least one cell per axis, got n={n}")
    if not a < b:
        raise MeshError(f"empty box ({a}, {b})^{d}")
    n1 = n + 1
    t = a + (b - a) * np.arange(n1) / n
    t[-1] = b
    axes = np.meshgrid(*([t] * d), indexing="ij")
    nodes = np.column_stack([ax.ravel() for ax in axes])
    ids = np.meshgrid(*([np.arange(n1)] * d), indexing="ij")
    bnd = np.zeros(n1**d, bool)
    for i in ids:
        bnd |= (i.ravel() == 0) | (i.ravel() == n)

    itype = np.int32 if n1**d < 2**31 else np.int64
    cells = np.meshgrid(*([np.arange(n, dtype=itype)] * d), indexing="ij")
    cells = [c.ravel() for c in cells]
    blocks = []
    for simplex in _kuhn_simplices(d):
        verts = [_grid_index([c + o for c, o in zip(cells, off)], n1) for off in simplex]
        blocks.append(np.column_stack(verts))
    # cell-major ordering keeps neighbouring elements close in memory
    el = np.stack(blocks, axis=1).reshape(-1, d + 1).astype(itype)
    return Mesh(d, nodes, el, bnd, grid=(float(a), float(b), int(n)))


@dataclass(frozen=True, eq=False)
class Prolongation:
    """Nodal interpolation from a coarse mesh to its refinement.

    ``matrix`` has one row per fine node; the weights of each row sum to one.
    """

    coarse_dofs: int
    fine_dofs: int
    matrix: sp.csr_matrix

    def __call__(self, coarse_values: np.ndarray) -> np.ndarray:
        return self.matrix @ coarse_values

    def restricted(self, coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
        """The map between interior-dof vectors."""
        return self.matrix[fine.interior][:, coarse.interior].tocsr()


def refine_uniform(mesh: Mesh) -> tuple[Mesh, Prolongation]:
    """Regular refinement (h halves) together with the prolongation.

    Fine nodes are the coarse nodes plus midpoints of coarse edges; the
    prolongation copies coincident nodes and averages edge endpoints.
    """
    if mesh.grid is None:
        raise MeshError("uniform refinement needs a structured mesh")
    a, b, n = mesh.grid
    d = mesh.dim
    fine = uniform_box_mesh(a, b, 2 * n, d)
    n1c, n1f = n + 1, 2 * n + 1

    idx = np.meshgrid(*([np.arange(n1f)] * d), indexing="ij")
    idx = [i.ravel() for i in idx]
    lo = [i // 2 for i in idx]
    hi = [(i + 1) // 2 for i in idx]
    rows = np.arange(n1f**d)
    c_lo = _grid_index(lo, n1c)
    c_hi = _grid_index(hi, n1c)
    coincident = c_lo == c_hi
    r = np.concatenate([rows[coincident], rows[~coincident], rows[~coincident]])
    c = np.concatenate([c_lo[coincident], c_lo[~coincident], c_hi[~coincident]])
    w = np.concatenate([np.ones(coincident.sum()), np.full(2 * (~coincident).sum(), 0.5)])
    P = sp.csr_matrix((w, (r, c)), shape=(fine.n_nodes, mesh.n_nodes))
    return fine, Prolongation(mesh.n_nodes, fine.n_nodes, P)


def dual_cell_measures(mesh: Mesh) -> np.ndarray:
    """Measures |omega_k| of the barycentric dual cells, one per node."""
    if mesh.dim not in (1, 2):
        raise UnsupportedDimensionError("dual mesh unsupported for d=3")
    share = mesh.measures / (mesh.dim + 1)
    return np.bincount(mesh.elements.ravel(), weights=np.repeat(share, mesh.dim + 1), minlength=mesh.n_nodes)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: header ``dim n_nodes n_elems``, node lines, element lines."""
    with text_sink(path) as fh:
        fh.write(f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements}\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        np.savetxt(fh, mesh.elements, fmt="%d")



def read_mesh(path) -> Mesh:
    """Inverse of :func:`write_mesh`; boundary nodes are those on the bounding box."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise MeshError(f"bad mesh header: {header!r}")
        dim, nn, ne = map(int, header)
        lines = fh.read().split("\n")
    body = [ln for ln in lines if ln.strip()]
    if len(body) != nn + ne:
        raise MeshError(f"expected {nn + ne} data lines, found {len(body)}")
    nodes = np.array([[float(t) for t in ln.split()] for ln in body[:nn]]).reshape(nn, dim)
    el = np.array([[int(t) for t in ln.split()] for ln in body[nn:]]).reshape(ne, dim + 1)
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    bnd = (np.isclose(nodes, lo) | np.isclose(nodes, hi)).any(axis=1)
    mesh = Mesh(dim, nodes, el, bnd)
    mesh.check()
    return mesh

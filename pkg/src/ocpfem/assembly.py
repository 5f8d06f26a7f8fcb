"""P1 finite element matrices and load vectors.

Every matrix is assembled on all nodes; ``interior=True`` restricts rows and
columns to the free nodes (homogeneous Dirichlet elimination).  On uniform
grid meshes with an element-constant coefficient the interior matrix is
built directly from the translation-invariant stencil, which avoids the
element loop on large 3D meshes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, UnsupportedDimensionError, dual_cell_measures, uniform_box_mesh
from .quadrature import integrate_elements

_CHUNK = 200_000
_STENCIL_MIN_CELLS = 4


def barycentric_gradients(mesh: Mesh, ids=None) -> np.ndarray:
    """Gradients of the barycentric coordinates, shape (E, d+1, d)."""
    J = mesh.jacobians(ids)
    Jinv = np.linalg.inv(J)  # rows are grad lambda_1..lambda_d
    g0 = -Jinv.sum(axis=1, keepdims=True)
    return np.concatenate([g0, Jinv], axis=1)


def mass_element_matrix(d: int) -> np.ndarray:
    """Reference mass matrix divided by |tau|."""
    return (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))


def dual_element_matrix(d: int) -> np.ndarray:
    """int_tau psi_j phi_i over the barycentric dual cells, divided by |tau|."""
    if d == 1:
        return np.array([[3.0, 1.0], [1.0, 3.0]]) / 8
    if d == 2:
        return np.array([[22.0, 7.0, 7.0], [7.0, 22.0, 7.0], [7.0, 7.0, 22.0]]) / 108
    raise UnsupportedDimensionError("dual mesh unsupported for d=3")


def _element_coefficient(mesh: Mesh, coeff, what: str) -> np.ndarray:
    c = np.broadcast_to(np.asarray(1.0 if coeff is None else coeff, float), (mesh.n_elements,))
    if np.any(c <= 0):
        raise ValueError(f"{what} must be positive on every element")
    return c


def _local(mesh: Mesh, kind: str, ids: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = mesh.dim
    meas = mesh.measures[ids] * c[ids]
    if kind == "mass":
        return meas[:, None, None] * mass_element_matrix(d)
    if kind == "dual":
        return meas[:, None, None] * dual_element_matrix(d)
    if kind == "stiffness":
        G = barycentric_gradients(mesh, ids)
        return meas[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    raise ValueError(kind)


def _assemble_elements(mesh: Mesh, kind: str, c: np.ndarray) -> sp.csr_matrix:
    d1 = mesh.dim + 1
    N = mesh.n_nodes
    A = sp.csr_matrix((N, N))
    for start in range(0, mesh.n_elements, _CHUNK):
        ids = np.arange(start, min(start + _CHUNK, mesh.n_elements))
        loc = _local(mesh, kind, ids, c)
        el = mesh.elements[ids]
        rows = np.repeat(el, d1, axis=1).ravel()
        cols = np.tile(el, (1, d1)).ravel()
        A = A + sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(N, N))
    A.sum_duplicates()
    A.sort_indices()
    return A


def _stencil(mesh: Mesh, kind: str, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (S, d) and values (S,) of an interior row on the uniform grid."""
    a, b, n = mesh.grid
    h = (b - a) / n
    d = mesh.dim
    probe = uniform_box_mesh(0.0, 4 * h, 4, d)
    A = _assemble_elements(probe, kind, np.full(probe.n_elements, c))
    center = int(sum(2 * 5**k for k in range(d)))
    row = A.getrow(center)
    idx = np.array(np.unravel_index(row.indices, (5,) * d)).T - 2
    order = np.lexsort(idx.T[::-1])
    return idx[order], row.data[order]


def _stencil_interior(mesh: Mesh, kind: str, c: float) -> sp.csr_matrix:
    offsets, values = _stencil(mesh, kind, c)
    d = mesh.dim
    m = mesh.grid[2] - 1
    N = m**d
    grid = np.meshgrid(*([np.arange(m, dtype=np.int32)] * d), indexing="ij")
    grid = [g.ravel() for g in grid]
    S = len(values)
    valid = np.ones((N, S), bool)
    for s, off in enumerate(offsets):
        for g, o in zip(grid, off):
            if o:
                valid[:, s] &= (g + o >= 0) & (g + o < m)
    flat_off = np.zeros(S, np.int64)
    for k in range(d):
        flat_off = flat_off * m + offsets[:, k]
    cols = (np.arange(N, dtype=np.int64)[:, None] + flat_off[None, :])[valid].astype(np.int32)
    data = np.broadcast_to(values, (N, S))[valid]
    indptr = np.concatenate([[0], np.cumsum(valid.sum(axis=1))])
    return sp.csr_matrix((data, cols, indptr), shape=(N, N))


def _use_stencil(mesh: Mesh, c: np.ndarray) -> bool:
    return (
        mesh.grid is not None
        and mesh.dim > 1
        and mesh.grid[2] >= _STENCIL_MIN_CELLS
        and np.ptp(c) <= 1e-14 * abs(c[0])
    )


def restrict(A: sp.spmatrix, mesh: Mesh) -> sp.csr_matrix:
    """Rows and columns of the free nodes."""
    i = mesh.interior
    return sp.csr_matrix(A)[i][:, i].tocsr()


def _assemble(mesh: Mesh, kind: str, c: np.ndarray, interior: bool) -> sp.csr_matrix:
    if interior and _use_stencil(mesh, c):
        return _stencil_interior(mesh, kind, float(c[0]))
    A = _assemble_elements(mesh, kind, c)
    return restrict(A, mesh) if interior else A


def assemble_mass(mesh: Mesh, interior: bool = False) -> sp.csr_matrix:
    """M[j, i] = int phi_i phi_j."""
    return _assemble(mesh, "mass", _element_coefficient(mesh, None, "weight"), interior)


def assemble_stiffness(mesh: Mesh, coeff=None, interior: bool = False) -> sp.csr_matrix:
    """K[j, i] = int coeff grad phi_i . grad phi_j with element-wise coeff."""
    return _assemble(mesh, "stiffness", _element_coefficient(mesh, coeff, "coefficient"), interior)


def assemble_scaled_mass(mesh: Mesh, weight, interior: bool = False) -> sp.csr_matrix:
    """M_w[j, i] = int w phi_i phi_j with element-wise w (e.g. w = 1/rho_h)."""
    return _assemble(mesh, "mass", _element_coefficient(mesh, weight, "weight"), interior)


def assemble_lumped_mass(mesh: Mesh, weight=None, interior: bool = False) -> np.ndarray:
    """Diagonal of lump(M): nodal row sums int w phi_j of the (weighted) mass matrix."""
    w = _element_coefficient(mesh, weight, "weight")
    d1 = mesh.dim + 1
    share = np.repeat(mesh.measures * w / d1, d1)
    diag = np.bincount(mesh.elements.ravel(), weights=share, minlength=mesh.n_nodes)
    return diag[mesh.interior] if interior else diag


def assemble_dual_mass(mesh: Mesh, interior: bool = False) -> sp.csr_matrix:
    """Mtilde[j, k] = int_{omega_j} phi_k on the barycentric dual mesh (d <= 2)."""
    if mesh.dim not in (1, 2):
        raise UnsupportedDimensionError("dual mesh unsupported for d=3")
    A = _assemble_elements(mesh, "dual", _element_coefficient(mesh, None, "weight"))
    return restrict(A, mesh) if interior else A


def assemble_load(mesh: Mesh, target, interior: bool = False, **quad) -> np.ndarray:
    """ybar_j = int ybar phi_j, subdividing elements cut by the target's interfaces."""
    if target.dim != mesh.dim:
        raise ValueError(f"target is {target.dim}D, mesh is {mesh.dim}D")

    def f(ids, x, bary):
        k, q, d = x.shape
        return target.func(x.reshape(-1, d)).reshape(k, q)

    loc = integrate_elements(mesh, f, target.straddles, **quad)
    b = np.bincount(mesh.elements.ravel(), weights=loc.ravel(), minlength=mesh.n_nodes)
    return b[mesh.interior] if interior else b


def target_moments(mesh: Mesh, target, **quad) -> tuple[np.ndarray, float]:
    """Load vector on all nodes together with ||ybar||_L2^2, in one quadrature pass."""
    if target.dim != mesh.dim:
        raise ValueError(f"target is {target.dim}D, mesh is {mesh.dim}D")

    def f(ids, x, bary):
        k, q, d = x.shape
        v = target.func(x.reshape(-1, d)).reshape(k, q)
        return np.stack([v, v * v], axis=2)

    loc = integrate_elements(mesh, f, target.straddles, **quad)
    b = np.bincount(mesh.elements.ravel(), weights=loc[..., 0].ravel(), minlength=mesh.n_nodes)
    return b, float(loc[..., 1].sum())


def l2_error_expanded(yMy: float, y_dot_load: float, target_norm_sq: float) -> float:
    """||y_h - ybar|| from ||y_h||^2, (y_h, ybar) and ||ybar||^2."""
    return float(np.sqrt(max(yMy - 2 * y_dot_load + target_norm_sq, 0.0)))


def l2_error(mesh: Mesh, y_full: np.ndarray, target, **quad) -> float:
    """||y_h - ybar||_L2 for a nodal P1 function y_h given on all nodes."""
    y_full = np.asarray(y_full, float)

    def f(ids, x, bary):
        k, q, d = x.shape
        yh = np.einsum("eqj,ej->eq", bary, y_full[mesh.elements[ids]])
        return (yh - target.func(x.reshape(-1, d)).reshape(k, q)) ** 2

    loc = integrate_elements(mesh, f, target.straddles, **quad)
    return float(np.sqrt(max(loc.sum(), 0.0)))


def l2_norm_target(mesh: Mesh, target, **quad) -> float:
    return l2_error(mesh, np.zeros(mesh.n_nodes), target, **quad)


__all__ = [
    "assemble_mass",
    "assemble_stiffness",
    "assemble_scaled_mass",
    "assemble_lumped_mass",
    "assemble_dual_mass",
    "assemble_load",
    "barycentric_gradients",
    "dual_cell_measures",
    "dual_element_matrix",
    "l2_error",
    "l2_error_expanded",
    "target_moments",
    "mass_element_matrix",
    "restrict",
]

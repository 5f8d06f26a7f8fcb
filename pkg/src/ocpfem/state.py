"""Reduced optimality system S y = ybar_h for the four regularization modes.

    h1      M + rho K                       (constant H^-1 regularization)
    h1var   M + K_{rho_h},   rho_h = h_tau^2
    l2      M + rho K lump(M)^-1 K          (lumped Schur complement, matrix-free)
    l2var   M + K lump(M_{1/rho_h})^-1 K,   rho_h = h_tau^4

The preconditioner is lump(M) in every case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import assembly
from .mesh import Mesh
from .sparsela import Operator, PcgReport, pcg, power_iteration

MODE_KINDS = ("h1", "h1var", "l2", "l2var")


@dataclass(frozen=True)
class RegularizationMode:
    """Regularization choice; constant modes carry rho (None = optimal h^(2 alpha))."""

    kind: str
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"unknown mode {self.kind!r}; choose from {', '.join(MODE_KINDS)}")
        if self.variable and self.rho is not None:
            raise ValueError("variable modes take no rho")
        if self.rho is not None and not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def alpha(self) -> int:
        return 1 if self.kind.startswith("h1") else 2

    @property
    def variable(self) -> bool:
        return self.kind.endswith("var")

    @property
    def is_l2(self) -> bool:
        return self.alpha == 2

    def with_rho(self, rho):
        return RegularizationMode(self.kind, None if self.variable else rho)

    def __str__(self):
        return self.kind if self.rho is None else f"{self.kind}(rho={self.rho:g})"


def H1Const(rho=None):
    return RegularizationMode("h1", rho)


def H1Variable():
    return RegularizationMode("h1var")


def L2Const(rho=None):
    return RegularizationMode("l2", rho)


def L2Variable():
    return RegularizationMode("l2var")


def optimal_rho(mode: RegularizationMode | str, h: float) -> float:
    """rho = h^(2 alpha): h^2 for H^-1, h^4 for L2 regularization."""
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    if isinstance(mode, str):
        mode = RegularizationMode(mode)
    return float(h) ** (2 * mode.alpha)


H_CONVENTIONS = ("unit", "cell", "diameter")


def mesh_size(mesh: Mesh, convention: str = "unit") -> float:
    """The h entering rho = h^(2 alpha).

    ``unit``      1/n, the grid spacing after scaling the box to the unit cube
    ``cell``      (b - a)/n, the grid spacing
    ``diameter``  the largest element diameter
    Meshes without grid information always use the diameter.
    """
    if convention not in H_CONVENTIONS:
        raise ValueError(f"unknown h convention {convention!r}")
    if mesh.grid is None or convention == "diameter":
        return mesh.global_h
    a, b, n = mesh.grid
    return 1.0 / n if convention == "unit" else (b - a) / n


@dataclass(eq=False)
class StateSystem:
    """Assembled interior-dof operators of one mesh and mode."""

    mesh: Mesh
    mode: RegularizationMode
    rho: float | None  # effective constant rho (None for variable modes)
    M: sp.csr_matrix
    K: sp.csr_matrix
    lump: np.ndarray  # lump(M), the preconditioner
    S: object  # csr_matrix (H^-1) or Operator (L2)
    schur_weight: np.ndarray | None = None  # D = K diag(schur_weight) K for L2 modes

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def apply_Cinv(self, r):
        return r / self.lump

    def adjoint(self, y: np.ndarray) -> np.ndarray | None:
        """p = -lump(M_{1/rho})^-1 K y for L2 modes, None otherwise."""
        if self.schur_weight is None:
            return None
        return -self.schur_weight * (self.K @ y)

    def dense(self) -> np.ndarray:
        """Dense S (small systems only)."""
        if sp.issparse(self.S):
            return self.S.toarray()
        return self.S.to_dense()


def build_system(mesh: Mesh, mode: RegularizationMode | str, h_convention: str = "unit") -> StateSystem:
    """Assemble S_rho,h and the lumped-mass preconditioner on the interior dofs.

    Constant modes without an explicit rho use rho = h^(2 alpha) with h from
    :func:`mesh_size`; variable modes use the element diameters h_tau.
    """
    if isinstance(mode, str):
        mode = RegularizationMode(mode)
    rho = None
    if not mode.variable:
        rho = optimal_rho(mode, mesh_size(mesh, h_convention)) if mode.rho is None else mode.rho
    M = assembly.assemble_mass(mesh, interior=True)
    K = assembly.assemble_stiffness(mesh, interior=True)
    lump = assembly.assemble_lumped_mass(mesh, interior=True)
    if mode.kind == "h1":
        S = (M + rho * K).tocsr()
        return StateSystem(mesh, mode, rho, M, K, lump, S)
    if mode.kind == "h1var":
        S = (M + assembly.assemble_stiffness(mesh, coeff=mesh.element_size**2, interior=True)).tocsr()
        return StateSystem(mesh, mode, rho, M, K, lump, S)
    if mode.kind == "l2":
        w = rho / lump
    else:
        w = 1.0 / assembly.assemble_lumped_mass(mesh, weight=mesh.element_size**-4.0, interior=True)

    def apply(y):
        return M @ y + K @ (w * (K @ y))

    S = Operator(M.shape[0], apply, f"M + K diag(w) K [{mode}]")
    return StateSystem(mesh, mode, rho, M, K, lump, S, w)


@dataclass(eq=False)
class StateSolution:
    """Interior state coefficients with solve metadata."""

    system: StateSystem
    y: np.ndarray
    pcg: PcgReport
    p: np.ndarray | None = None

    @property
    def mesh(self) -> Mesh:
        return self.system.mesh

    @property
    def mode(self) -> RegularizationMode:
        return self.system.mode

    @property
    def y_full(self) -> np.ndarray:
        return self.mesh.extend(self.y)

    @property
    def iterations(self) -> int:
        return self.pcg.iterations


def solve_state(system: StateSystem, load: np.ndarray, x0=None, tol: float = 1e-6, max_it: int = 500) -> StateSolution:
    """PCG for S y = load (interior load vector), preconditioned by lump(M)."""
    load = np.asarray(load, float)
    if load.shape != (system.n,):
        raise ValueError(f"load has shape {load.shape}, system has {system.n} dofs")
    y, report = pcg(system.S, system.apply_Cinv, load, x0=x0, tol=tol, max_it=max_it)
    return StateSolution(system, y, report, system.adjoint(y))


def solve_target(mesh: Mesh, mode, target, x0=None, tol: float = 1e-6, max_it: int = 500, h_convention="unit") -> StateSolution:
    """Assemble everything for ``target`` on ``mesh`` and solve."""
    system = build_system(mesh, mode, h_convention)
    load = assembly.assemble_load(mesh, target, interior=True)
    return solve_state(system, load, x0=x0, tol=tol, max_it=max_it)


def rayleigh_bounds(system: StateSystem, n_samples: int = 100, seed: int = 0) -> tuple[float, float]:
    """Extreme Rayleigh quotients (S x, x)/(lump(M) x, x).

    Combines random samples with power-iteration estimates of both ends of
    the spectrum of the symmetric form C^-1/2 S C^-1/2.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    S = system.S
    C = system.lump
    X = rng.standard_normal((n_samples, system.n))
    q = [float(x @ (S @ x)) / float(x @ (C * x)) for x in X]
    s = 1.0 / np.sqrt(C)

    def B(v):
        return s * (S @ (s * v))

    lam_max = power_iteration(B, system.n, iters=500, seed=seed)
    shift = 1.05 * lam_max
    lam_min = shift - power_iteration(lambda v: shift * v - B(v), system.n, iters=2000, seed=seed + 1)
    return min(min(q), lam_min), max(max(q), lam_max)


def dense_spectrum(system: StateSystem) -> np.ndarray:
    """Eigenvalues of lump(M)^-1 S by a dense symmetric eigensolve."""
    s = 1.0 / np.sqrt(system.lump)
    B = s[:, None] * system.dense() * s[None, :]
    return np.linalg.eigvalsh((B + B.T) / 2)


def compute_error_L2(mesh: Mesh, y_full: np.ndarray, target, **quad) -> float:
    """||y_h - ybar||_L2 with the same interface subdivision as the load vector."""
    return assembly.l2_error(mesh, y_full, target, **quad)


def discrete_error_M(mesh: Mesh, y_full: np.ndarray, target, M_full=None) -> float:
    """||y_h - I_h ybar||_M with I_h the nodal interpolant (all nodes)."""
    M_full = assembly.assemble_mass(mesh) if M_full is None else M_full
    e = np.asarray(y_full, float) - mesh.interpolate(target)
    return float(np.sqrt(max(e @ (M_full @ e), 0.0)))

"""Control recovery from a computed state, and control costs.

The discrete control solves  Mbar u = K y  with Mbar = M (P1 controls,
``primal``) or Mbar = Mtilde (piecewise constants on the barycentric dual
mesh, ``dual``, d <= 2).  Both systems are solved by CG preconditioned
with lump(M).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .mesh import Mesh, UnsupportedDimensionError, dual_cell_measures
from .sparsela import PcgReport, pcg

SPACES = ("primal", "dual")
DEFAULT_C_S = 2.0


@dataclass(eq=False)
class ControlSolution:
    """Recovered control coefficients (interior nodes; zero on the boundary)."""

    mesh: Mesh
    u: np.ndarray
    space: str
    pcg: PcgReport

    @property
    def u_full(self) -> np.ndarray:
        return self.mesh.extend(self.u)

    @property
    def iterations(self) -> int:
        return self.pcg.iterations


def recover_control(mesh: Mesh, y: np.ndarray, space: str = "primal", x0=None, tol: float = 1e-10,
                    K=None, Mbar=None, lump=None) -> ControlSolution:
    """Solve Mbar u = K y for the interior state vector ``y``.

    Pre-assembled interior matrices may be passed to avoid re-assembly.
    """
    if space not in SPACES:
        raise ValueError(f"unknown control space {space!r}")
    if space == "dual" and mesh.dim > 2:
        raise UnsupportedDimensionError("dual mesh unsupported for d=3")
    K = assembly.assemble_stiffness(mesh, interior=True) if K is None else K
    if Mbar is None:
        Mbar = (assembly.assemble_mass if space == "primal" else assembly.assemble_dual_mass)(mesh, interior=True)
    lump = assembly.assemble_lumped_mass(mesh, interior=True) if lump is None else lump
    rhs = K @ np.asarray(y, float)
    u, report = pcg(Mbar, lambda r: r / lump, rhs, x0=x0, tol=tol, max_it=max(500, 10 * int(np.sqrt(rhs.size))))
    return ControlSolution(mesh, u, space, report)


def cost_L2(ctrl: ControlSolution, M=None) -> float:
    """||u||_L2: sqrt(u' M u) for P1 controls, sqrt(sum |omega_k| u_k^2) for dual-P0."""
    if ctrl.space == "dual":
        w = dual_cell_measures(ctrl.mesh)[ctrl.mesh.interior]
        return float(np.sqrt(np.sum(w * ctrl.u**2)))
    M = assembly.assemble_mass(ctrl.mesh, interior=True) if M is None else M
    return float(np.sqrt(max(ctrl.u @ (M @ ctrl.u), 0.0)))


def _pieces_1d(ctrl: ControlSolution):
    """Breakpoints (nodes and midpoints) and the end values of u on each piece."""
    x = ctrl.mesh.nodes[:, 0]
    order = np.argsort(x)
    x = x[order]
    u = ctrl.u_full[order]
    mid = (x[:-1] + x[1:]) / 2
    pts = np.empty(2 * x.size - 1)
    pts[0::2], pts[1::2] = x, mid
    left = np.empty(pts.size - 1)
    right = np.empty(pts.size - 1)
    if ctrl.space == "primal":
        umid = (u[:-1] + u[1:]) / 2
        left[0::2], right[0::2] = u[:-1], umid
        left[1::2], right[1::2] = umid, u[1:]
    else:
        # constant on each half cell, equal to the value of the nearest node
        left[0::2] = right[0::2] = u[:-1]
        left[1::2] = right[1::2] = u[1:]
    return pts, left, right


def cost_Hminus1_exact_1d(ctrl: ControlSolution) -> float:
    """||u||_H^-1(0,1) = ||ytilde'|| where -ytilde'' = u, ytilde(0) = ytilde(1) = 0.

    ytilde' = C - U with U(x) = int_0^x u and C = int_0^1 U; the integrals
    are exact for piecewise linear or piecewise constant u.
    """
    if ctrl.mesh.dim != 1:
        raise UnsupportedDimensionError("the exact H^-1 cost is available in 1D only")
    return hminus1_norm_1d(*_pieces_1d(ctrl))


def hminus1_norm_1d(pts: np.ndarray, uL: np.ndarray, uR: np.ndarray) -> float:
    """H^-1(a,b) norm of the piecewise linear function with end values (uL, uR) on [pts_i, pts_i+1]."""
    pts = np.asarray(pts, float)
    uL = np.asarray(uL, float)
    uR = np.asarray(uR, float)
    ell = np.diff(pts)
    U = np.concatenate([[0.0], np.cumsum(ell * (uL + uR) / 2)])

    def U_at(i, s):
        # U on piece i at local offset s in [0, ell_i]
        return U[i][:, None] + s * uL[i][:, None] + s**2 * ((uR - uL) / (2 * ell))[i][:, None]

    i = np.arange(ell.size)
    # U is quadratic on each piece: Simpson is exact
    Umid = U_at(i, ell[:, None] / 2)[:, 0]
    C = float(np.sum(ell * (U[:-1] + 4 * Umid + U[1:]) / 6)) / (pts[-1] - pts[0])
    t, w = np.polynomial.legendre.leggauss(3)
    s = (t[None, :] + 1) / 2 * ell[:, None]
    vals = (C - U_at(i, s)) ** 2
    return float(np.sqrt(np.sum(vals @ w * ell / 2)))


def cost_Hminus1_bounds(mesh: Mesh, y: np.ndarray, c_S: float = DEFAULT_C_S, K=None) -> tuple[float, float]:
    """[sqrt(y'Ky), c_S sqrt(y'Ky)] for the interior state vector ``y``."""
    if c_S < 1:
        raise ValueError("c_S must be at least 1")
    K = assembly.assemble_stiffness(mesh, interior=True) if K is None else K
    g = float(np.sqrt(max(y @ (K @ y), 0.0)))
    return g, c_S * g

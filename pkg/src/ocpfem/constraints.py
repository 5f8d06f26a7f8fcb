"""State constraints g- <= y <= g+ by the primal-dual active set method.

The discrete problem is

    (M + rho K) y = ybar_h + lambda,
    lambda = min(0, lambda + c (g+ - y)) + max(0, lambda + c (g- - y)),

solved as a semi-smooth Newton iteration: the active sets are read off
the current (y, lambda), active dofs are fixed to their bounds, and the
remaining dofs solve the reduced linear system with lambda = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .mesh import Mesh
from .sparsela import SolverError, pcg
from .state import H1Const, build_system, mesh_size, optimal_rho


class InfeasibleBoundsError(ValueError):
    """g- > g+ somewhere, or 0 is not admissible."""


@dataclass(frozen=True)
class BoxBounds:
    """Lower and upper bounds: constants, nodal arrays, or callables of x."""

    g_minus: object = -np.inf
    g_plus: object = np.inf

    def nodal(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Bounds at the interior nodes (nodal interpolation)."""
        lo = _evaluate(self.g_minus, mesh)
        hi = _evaluate(self.g_plus, mesh)
        if np.any(lo > hi):
            raise InfeasibleBoundsError("g_minus exceeds g_plus at some node")
        if np.any(lo > 0) or np.any(hi < 0):
            raise InfeasibleBoundsError("bounds must admit y = 0 (g_minus <= 0 <= g_plus)")
        return lo, hi


def _evaluate(g, mesh: Mesh) -> np.ndarray:
    if callable(g):
        v = np.asarray(g(mesh.nodes), float)
    else:
        v = np.asarray(g, float)
        if v.ndim == 0:
            return np.full(mesh.n_interior, float(v))
    if v.shape == (mesh.n_nodes,):
        return v[mesh.interior]
    if v.shape == (mesh.n_interior,):
        return v
    raise ValueError(f"bound has shape {v.shape}; expected scalar, {mesh.n_nodes} or {mesh.n_interior} values")


@dataclass(eq=False)
class ActiveSetState:
    y: np.ndarray
    lam: np.ndarray
    active_plus: np.ndarray
    active_minus: np.ndarray
    newton_iterations: int
    pcg_iterations: int
    converged: bool
    rho: float
    residual: float = np.nan


def complementarity_residual(A, load, y, lam, g_minus, g_plus, c: float) -> float:
    """||lambda - min(0, lambda + c(g+ - y)) - max(0, lambda + c(g- - y))||_inf + ||A y - load - lambda||_inf."""
    comp = lam - np.minimum(0.0, lam + c * (g_plus - y)) - np.maximum(0.0, lam + c * (g_minus - y))
    F1 = A @ y - load - lam
    return float(np.max(np.abs(comp), initial=0.0) + np.max(np.abs(F1), initial=0.0))


def solve_constrained(mesh: Mesh, target=None, bounds: BoxBounds = BoxBounds(), rho: float | None = None,
                      c: float = 1.0, max_newton: int = 50, tol: float = 1e-10, load=None,
                      h_convention: str = "unit") -> ActiveSetState:
    """Primal-dual active set iteration for the box-constrained state problem.

    ``load`` (interior vector) replaces the target's load vector if given.
    """
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    rho = optimal_rho("h1", mesh_size(mesh, h_convention)) if rho is None else rho
    system = build_system(mesh, H1Const(rho))
    A = system.S
    if load is None:
        if target is None:
            raise ValueError("need a target or a load vector")
        load = assembly.assemble_load(mesh, target, interior=True)
    load = np.asarray(load, float)
    g_minus, g_plus = bounds.nodal(mesh)
    Cinv = system.apply_Cinv

    y, rep = pcg(A, Cinv, load, tol=tol)
    its = rep.iterations
    lam = np.zeros_like(y)
    prev = None
    converged = False
    n_newton = 0
    for n_newton in range(1, max_newton + 1):
        plus = lam + c * (g_plus - y) < 0
        minus = (lam + c * (g_minus - y) > 0) & ~plus
        key = (plus.tobytes(), minus.tobytes())
        if key == prev:
            converged = True
            n_newton -= 1
            break
        prev = key
        y, lam, k = _reduced_solve(A, system.lump, load, plus, minus, g_minus, g_plus, tol)
        its += k
    if not converged:
        raise SolverError(f"active sets did not settle in {max_newton} Newton steps")
    state = ActiveSetState(y, lam, np.flatnonzero(plus), np.flatnonzero(minus), n_newton, its, True, rho)
    state.residual = complementarity_residual(A, load, y, lam, g_minus, g_plus, c)
    return state


def _reduced_solve(A, lump, load, plus, minus, g_minus, g_plus, tol):
    """y fixed on the active sets, A y = load on the inactive set; lambda = A y - load."""
    y = np.zeros_like(load)
    y[plus] = g_plus[plus]
    y[minus] = g_minus[minus]
    free = ~(plus | minus)
    its = 0
    if free.any():
        A_ff = A[free][:, free]
        rhs = load[free] - A[free][:, ~free] @ y[~free]
        y_f, rep = pcg(A_ff, lambda r: r / lump[free], rhs, tol=tol)
        # one extra sweep of CG on the residual keeps F1 at round-off level
        y_f, rep2 = pcg(A_ff, lambda r: r / lump[free], rhs, x0=y_f, tol=tol)
        y[free] = y_f
        its = rep.iterations + rep2.iterations
    lam = A @ y - load
    lam[free] = 0.0
    return y, lam, its

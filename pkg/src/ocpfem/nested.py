"""Accuracy- and cost-controlled nested iteration over uniform refinements.

Each level solves the state system (initial guess: the prolongated state of
the previous level), recovers the control, and then applies two tests in
order: the cost test c_l > c_cost and the accuracy test
||y_l - ybar_l||_M <= eps ||ybar_l||_M.  With ``nested=False`` every level
starts from zero with the full tolerance instead (the reference regime).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import assembly
from .mesh import Mesh, refine_uniform, uniform_box_mesh
from .recovery import cost_Hminus1_bounds, recover_control
from .state import RegularizationMode, build_system, mesh_size, solve_state
from .targets import TargetFunction

STOP_REASONS = ("none", "cost", "accuracy", "max_level")
FULL_TOLERANCE = 1e-6


@dataclass
class NestedConfig:
    target: TargetFunction
    mode: str = "h1"
    n0: int = 16
    max_levels: int = 4
    eps: float = 1e-3
    c_cost: float = np.inf
    nested: bool = True
    tol_rule: str | float = "auto"  # "auto" or a fixed relative tolerance
    tol_factor: float = 0.1
    cost_measure: str = "l2"  # "l2": u'Mu, "hminus1": y'Ky
    lazy_recovery: bool = False
    recover_space: str = "primal"
    h_convention: str = "unit"
    continuous_error: bool = True

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.c_cost > 0:
            raise ValueError(f"c_cost must be positive, got {self.c_cost}")
        if self.max_levels < 1 or self.n0 < 1:
            raise ValueError("need at least one level and one cell")
        if self.cost_measure not in ("l2", "hminus1"):
            raise ValueError(f"unknown cost measure {self.cost_measure!r}")
        RegularizationMode(self.mode)


@dataclass
class LevelReport:
    level: int
    dofs: int  # all nodes, as in the tables
    interior_dofs: int
    h: float
    rho: float | None
    its: int
    recovery_its: int
    error: float  # continuous ||y_h - ybar||_L2 (nan if not computed)
    error_M: float  # ||y_h - I_h ybar||_M
    target_norm_M: float
    cost: float
    tol: float
    stop_reason: str = "none"
    time: float = 0.0
    extra: dict = field(default_factory=dict)


def nested_pcg_tolerance(level: int, e_prev=(), expected_eoc: float = 2.0, factor: float = 0.1, fixed=None) -> float:
    """Relative PCG tolerance for a level started from the prolongated solution.

    Level 1 (or a fixed override) uses the given tolerance / 1e-6.  Otherwise
    the tolerance is factor * 2^-eoc, i.e. a tenth of the error reduction
    expected from one refinement; eoc is measured from the last two errors
    when available, else taken from the target's regularity.
    """
    if fixed is not None:
        return float(fixed)
    if level <= 1:
        return FULL_TOLERANCE
    e_prev = [e for e in e_prev if e > 0]
    eoc = expected_eoc
    if len(e_prev) >= 2:
        eoc = float(np.clip(np.log2(e_prev[-2] / e_prev[-1]), 0.25, 4.0))
    return factor * 2.0 ** (-eoc)


@lru_cache(maxsize=6)
def _target_data(target: TargetFunction, n: int):
    a, b = target.domain
    mesh = uniform_box_mesh(a, b, n, target.dim)
    load, norm_sq = assembly.target_moments(mesh, target)
    return load, norm_sq


def run_nested(config: NestedConfig, progress=None) -> list[LevelReport]:
    """Run the level loop; returns one report per completed level."""
    t = config.target
    a, b = t.domain
    fixed = None if config.tol_rule == "auto" else float(config.tol_rule)
    mesh = uniform_box_mesh(a, b, config.n0, t.dim)
    P = None
    y_prev = u_prev = None
    reports: list[LevelReport] = []
    errors_M: list[float] = []
    for level in range(1, config.max_levels + 1):
        t0 = time.perf_counter()
        if level > 1:
            fine, prol = refine_uniform(mesh)
            P = prol.restricted(mesh, fine)
            mesh = fine
        system = build_system(mesh, RegularizationMode(config.mode), config.h_convention)
        load_full, norm_sq = _target_data(t, mesh.grid[2])
        load = load_full[mesh.interior]
        if config.nested and level > 1:
            x0 = P @ y_prev
            tol = nested_pcg_tolerance(level, errors_M, t.expected_eoc, config.tol_factor, fixed)
        else:
            x0 = None
            tol = FULL_TOLERANCE if fixed is None else fixed
        sol = solve_state(system, load, x0=x0, tol=tol)
        y = sol.y
        last = level == config.max_levels

        rec_its = 0
        u = None
        if not config.lazy_recovery:
            u0 = P @ u_prev if (config.nested and level > 1 and u_prev is not None) else None
            ctrl = recover_control(mesh, y, config.recover_space, x0=u0, K=system.K,
                                   Mbar=system.M if config.recover_space == "primal" else None, lump=system.lump)
            u, rec_its = ctrl.u, ctrl.iterations
        if config.cost_measure == "l2" and u is not None:
            cost = float(u @ (system.M @ u))
        else:
            cost = cost_Hminus1_bounds(mesh, y, K=system.K)[0] ** 2

        ybar_I = mesh.interpolate(t)
        yMy = float(y @ (system.M @ y))
        e_M, ybar_M = _discrete_errors(mesh, y, ybar_I)
        err = assembly.l2_error_expanded(yMy, float(y @ load), norm_sq) if config.continuous_error else float("nan")
        errors_M.append(e_M)

        if cost > config.c_cost:
            reason = "cost"
        elif e_M <= config.eps * ybar_M:
            reason = "accuracy"
        elif last:
            reason = "max_level"
        else:
            reason = "none"
        final_cost = cost
        if config.lazy_recovery and reason != "none":
            ctrl = recover_control(mesh, y, config.recover_space, K=system.K, lump=system.lump)
            rec_its = ctrl.iterations
            final_cost = float(ctrl.u @ (system.M @ ctrl.u)) if config.recover_space == "primal" else float("nan")
        rep = LevelReport(
            level=level, dofs=mesh.n_nodes, interior_dofs=mesh.n_interior,
            h=mesh_size(mesh, config.h_convention), rho=system.rho,
            its=sol.iterations, recovery_its=rec_its, error=err, error_M=e_M, target_norm_M=ybar_M,
            cost=cost, tol=tol, stop_reason=reason, time=time.perf_counter() - t0,
            extra={"control_cost": final_cost, "converged": sol.pcg.converged},
        )
        reports.append(rep)
        if progress is not None:
            progress(rep)
        if reason != "none":
            break
        y_prev, u_prev = y, u
    return reports


def _discrete_errors(mesh: Mesh, y: np.ndarray, ybar_I: np.ndarray) -> tuple[float, float]:
    """||y - I ybar||_M and ||I ybar||_M with the full (pre-elimination) mass matrix."""
    M = assembly.assemble_mass(mesh) if mesh.n_nodes < 300_000 else None
    e = mesh.extend(y) - ybar_I
    if M is not None:
        return float(np.sqrt(e @ (M @ e))), float(np.sqrt(ybar_I @ (M @ ybar_I)))
    return _mass_norm_structured(mesh, e), _mass_norm_structured(mesh, ybar_I)


def _mass_norm_structured(mesh: Mesh, v: np.ndarray) -> float:
    """sqrt(v' M v) summed element by element (no global matrix)."""
    loc = assembly.mass_element_matrix(mesh.dim)
    total = 0.0
    step = 1_000_000
    for start in range(0, mesh.n_elements, step):
        ids = slice(start, min(start + step, mesh.n_elements))
        ve = v[mesh.elements[ids]]
        total += float(np.sum(mesh.measures[ids] * np.einsum("ei,ij,ej->e", ve, loc, ve)))
    return float(np.sqrt(max(total, 0.0)))


def total_work(reports, from_level: int = 2) -> int:
    """Sum of state PCG iterations over levels >= from_level."""
    return sum(r.its for r in reports if r.level >= from_level)


__all__ = ["NestedConfig", "LevelReport", "nested_pcg_tolerance", "run_nested", "total_work"]

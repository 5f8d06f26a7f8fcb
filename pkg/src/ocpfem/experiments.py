"""Experiment drivers: convergence tables, rho sweeps and report output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import assembly, oracle1d
from .mesh import uniform_interval_mesh
from .nested import NestedConfig, run_nested
from .recovery import cost_Hminus1_bounds, cost_Hminus1_exact_1d, cost_L2, recover_control
from .sparsela import SolverError
from .state import RegularizationMode, build_system, solve_state
from .targets import get_target


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Plain-text (key=value) experiment description."""

    command: str = "convergence"
    dim: int = 1
    target: str = "target1"
    mode: str = "h1"
    cells: int = 16
    levels: int = 3
    rho: str = "auto"
    rho_list: str = ""
    coupling: str = "coupled"
    tol: float = 1e-6
    eps: float = 1e-3
    budget: float = math.inf
    space: str = "primal"
    h_convention: str = "unit"
    output: str = "-"
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "extra":
                continue
            lines.append(f"{f.name}={_to_text(getattr(self, f.name))}")
        lines.extend(f"{k}={v}" for k, v in sorted(self.extra.items()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        kv = parse_key_values(text)
        known = {f.name: f for f in fields(cls) if f.name != "extra"}
        cfg = cls()
        for key, raw in kv.items():
            if key in known:
                setattr(cfg, key, _coerce(raw, type(getattr(cfg, key)), key))
            else:
                cfg.extra[key] = raw
        return cfg


def parse_key_values(text: str) -> dict:
    """key=value lines; blank lines and '#' comments are skipped."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key.replace("-", "_")] = value
    return out


def _to_text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from exc


# --- tables -----------------------------------------------------------------

def fmt(v) -> str:
    """Floats at 6 significant digits; everything else as str."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if v is None:
        return ""
    return str(v)


@dataclass
class EocTable:
    """Rows (level, dofs, h, rho, error, eoc, its, time).

    eoc_l = log2(e_{l-1}/e_l) is computed from the errors as printed, so it
    can be recomputed from the emitted file.
    """

    rows: list = field(default_factory=list)
    columns: tuple = ("level", "dofs", "h", "rho", "error", "eoc", "its", "time")

    def add(self, level, dofs, h, rho, error, its, time, **extra):
        row = {"level": level, "dofs": dofs, "h": h, "rho": rho, "error": error, "its": its, "time": time}
        row.update(extra)
        row["eoc"] = eoc_from_printed(self.rows[-1]["error"], error) if self.rows else None
        self.rows.append(row)

    @property
    def errors(self):
        return [r["error"] for r in self.rows]

    @property
    def eocs(self):
        return [r["eoc"] for r in self.rows[1:]]


def eoc_from_printed(e_prev: float, e: float) -> float:
    a, b = float(fmt(float(e_prev))), float(fmt(float(e)))
    if a <= 0 or b <= 0:
        return float("nan")
    return math.log2(a / b)


def run_convergence(config: ExperimentConfig) -> EocTable:
    """Uniform refinement from ``cells`` over ``levels`` levels (full PCG tolerance)."""
    target = _target(config)
    # the smallest positive eps disables the accuracy stop: every level is computed
    nc = NestedConfig(target, mode=config.mode, n0=config.cells, max_levels=config.levels,
                      eps=float(np.nextafter(0.0, 1.0)), nested=False, tol_rule=config.tol,
                      lazy_recovery=True, cost_measure="hminus1", h_convention=config.h_convention)
    table = EocTable()
    for r in run_nested(nc):
        require_converged(r.extra["converged"], f"level {r.level}")
        table.add(r.level, r.dofs, r.h, r.rho, r.error, r.its, r.time, error_M=r.error_M)
    return table


def require_converged(converged: bool, where: str):
    if not converged:
        raise SolverError(f"PCG did not reach its tolerance ({where})")


def _target(config: ExperimentConfig):
    try:
        t = get_target(config.target, config.dim)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    if t.dim != config.dim:
        raise ConfigError(f"target {config.target} is {t.dim}D but dim={config.dim}")
    return t


def parse_rho_list(text: str) -> list[float]:
    """Comma-separated values; ``2^a:b[:s]`` expands to 2^a, 2^(a+s), ... down or up to 2^b."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        if item.startswith("2^") and ":" in item:
            try:
                parts = [int(v) for v in item[2:].split(":")]
            except ValueError as exc:
                raise ConfigError(f"bad rho range {item!r}") from exc
            if len(parts) not in (2, 3):
                raise ConfigError(f"bad rho range {item!r}")
            lo, hi = parts[:2]
            step = parts[2] if len(parts) == 3 else (1 if hi >= lo else -1)
            if step == 0 or (hi - lo) * step < 0:
                raise ConfigError(f"rho range {item!r} has a step pointing away from its end")
            out.extend(2.0**k for k in range(lo, hi + (1 if step > 0 else -1), step))
        elif item.startswith("2^"):
            out.append(2.0 ** float(item[2:]))
        else:
            try:
                out.append(float(item))
            except ValueError as exc:
                raise ConfigError(f"bad rho value {item!r}") from exc
    if any(not r > 0 for r in out):
        raise ConfigError("rho values must be positive")
    return out


def coupled_cells(rho: float, reg: str) -> int:
    """n with rho = h^(2 alpha), h = 1/n."""
    alpha = 1 if reg == "h1" else 2
    return max(1, int(round(rho ** (-1.0 / (2 * alpha)))))


SWEEP_COLUMNS = ("rho", "cells", "fem_error", "exact_error", "its",
                 "cost_l2_primal", "cost_l2_dual", "cost_h_primal", "cost_h_dual", "cost_h_lower",
                 "exact_cost_h", "exact_cost_l2")


def sweep_point(target_name: str, reg: str, rho: float, cells: int, tol: float = 1e-10) -> dict:
    """One 1D solve with recovered controls, joined with the oracle values."""
    target = get_target(target_name)
    mesh = uniform_interval_mesh(0.0, 1.0, cells)
    system = build_system(mesh, RegularizationMode(reg, rho))
    load = assembly.assemble_load(mesh, target, interior=True)
    sol = solve_state(system, load, tol=tol)
    require_converged(sol.pcg.converged, f"rho={rho:g}, cells={cells}")
    err = assembly.l2_error(mesh, sol.y_full, target)
    prim = recover_control(mesh, sol.y, "primal", K=system.K, Mbar=system.M, lump=system.lump)
    dual = recover_control(mesh, sol.y, "dual", K=system.K, lump=system.lump)
    row = {
        "rho": rho, "cells": cells, "fem_error": err, "its": sol.iterations,
        "cost_l2_primal": cost_L2(prim, system.M), "cost_l2_dual": cost_L2(dual),
        "cost_h_primal": cost_Hminus1_exact_1d(prim), "cost_h_dual": cost_Hminus1_exact_1d(dual),
        "cost_h_lower": cost_Hminus1_bounds(mesh, sol.y, K=system.K)[0],
    }
    if oracle1d.canonical_target(target_name) in ("target1", "target2", "target3"):
        row["exact_error"] = oracle1d.exact_error(target_name, reg, rho)
        row["exact_cost_h"], row["exact_cost_l2"] = oracle1d.exact_costs(target_name, reg, rho)
    return row


def run_sweep(config: ExperimentConfig) -> list[dict]:
    """rho sweep in 1D; ``coupling=coupled`` ties the mesh to rho, ``fixed`` keeps ``cells``."""
    if config.dim != 1:
        raise ConfigError("sweeps are one-dimensional")
    reg = "l2" if config.mode.startswith("l2") else "h1"
    rows = []
    for rho in parse_rho_list(config.rho_list):
        n = coupled_cells(rho, reg) if config.coupling == "coupled" else config.cells
        rows.append(sweep_point(config.target, reg, rho, n, config.tol))
    return rows


def emit_report(rows, path="-", fmt_: str = "csv", columns=None) -> str:
    """Write rows (list of dicts) as CSV or JSON; returns the text written."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    if fmt_ == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])
        text = buf.getvalue()
    elif fmt_ == "json":
        def conv(v):
            if isinstance(v, (float, np.floating)):
                return float(fmt(v)) if math.isfinite(v) else str(v)
            if isinstance(v, np.integer):
                return int(v)
            return v
        data = [{c: conv(r.get(c)) for c in columns} for r in rows]
        text = json.dumps(data[0] if len(data) == 1 else data, indent=1) + "\n"
    else:
        raise ConfigError(f"unknown format {fmt_!r}")
    if path in ("-", None):
        return text
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
    return text

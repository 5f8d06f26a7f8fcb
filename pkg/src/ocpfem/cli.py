"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np
import scipy.sparse as sp

from . import assembly, oracle1d
from .constraints import BoxBounds, solve_constrained
from .experiments import (SWEEP_COLUMNS, ConfigError, EocTable, ExperimentConfig, emit_report, parse_key_values,
                          parse_rho_list, require_converged, run_convergence, run_sweep)
from .mesh import uniform_box_mesh, write_mesh
from .nested import NestedConfig, run_nested
from .recovery import cost_Hminus1_bounds, cost_Hminus1_exact_1d, cost_L2, recover_control
from .sparsela import SolverError, write_coo
from .state import MODE_KINDS, RegularizationMode, build_system, solve_state
from .targets import TARGET_NAMES, get_target

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
MAX_LEVEL_3D = 4


def _rho(value: str):
    return None if value == "auto" else float(value)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).lower() in ("1", "true", "yes", "on")


def _add_problem(p, dim=1, target="target1", cells=16):
    p.add_argument("--dim", type=int, default=dim, choices=(1, 2, 3))
    p.add_argument("--target", default=target, choices=TARGET_NAMES)
    p.add_argument("--cells", type=int, default=cells, help="cells per axis (level 1)")


def _add_output(p, fmt="csv"):
    p.add_argument("-o", "--output", default="-", help="output file ('-' = stdout)")
    p.add_argument("--format", default=fmt, choices=("csv", "json"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocpfem", description="State-based optimal control FEM experiments.")
    parser.add_argument("--config", help="key=value file providing defaults; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("state", help="solve the state equation once")
    _add_problem(p)
    p.add_argument("--mode", default="h1", choices=MODE_KINDS)
    p.add_argument("--rho", type=_rho, default="auto", help="'auto' (h^(2 alpha)) or a value")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-it", dest="max_it", type=int, default=500)
    p.add_argument("--dump", help="also write the state as JSON (input of 'recover')")
    _add_output(p, "json")

    p = sub.add_parser("recover", help="recover the control from a state dump")
    p.add_argument("--state", required=True, help="JSON written by 'state --dump'")
    p.add_argument("--space", default="primal", choices=("primal", "dual"))
    p.add_argument("--c-s", dest="c_s", type=float, default=2.0, help="H^-1 upper-bound constant")
    _add_output(p)

    p = sub.add_parser("sweep", help="1D rho sweep joined with the exact solution")
    _add_problem(p)
    p.add_argument("--reg", "--mode", dest="mode", default="h1", choices=("h1", "l2"))
    p.add_argument("--rho-list", dest="rho_list", default="", help="comma list; '2^a:b' expands powers of two")
    p.add_argument("--coupling", default="coupled", choices=("coupled", "fixed"))
    # the finest sweep points resolve errors near 1e-8, so the solve must be tighter still
    p.add_argument("--tol", type=float, default=1e-10)
    _add_output(p)

    for name, helptext in (("convergence", "eoc table on uniform refinements"),
                           ("nested", "nested iteration with accuracy and cost control")):
        p = sub.add_parser(name, help=helptext)
        _add_problem(p, dim=3, target="peak3d")
        p.add_argument("--mode", default="h1", choices=MODE_KINDS)
        p.add_argument("--levels", type=int, default=3)
        p.add_argument("--h-convention", dest="h_convention", default="unit", choices=("unit", "cell", "diameter"))
        p.add_argument("--allow-deep", dest="allow_deep", action="store_true",
                       help=f"permit more than {MAX_LEVEL_3D} levels in 3D")
        if name == "convergence":
            p.add_argument("--tol", type=float, default=1e-6)
        else:
            p.add_argument("--eps", type=float, default=1e-3)
            p.add_argument("--budget", type=float, default=math.inf, help="cost bound c_cost")
            p.add_argument("--tol-rule", dest="tol_rule", default="auto", help="'auto' or a fixed relative tolerance")
            p.add_argument("--tol-factor", dest="tol_factor", type=float, default=0.1)
            p.add_argument("--cost", dest="cost_measure", default="l2", choices=("l2", "hminus1"))
            p.add_argument("--non-nested", dest="non_nested", action="store_true")
            p.add_argument("--lazy-recovery", dest="lazy_recovery", action="store_true")
        _add_output(p)

    p = sub.add_parser("constrained", help="box-constrained state by primal-dual active sets")
    _add_problem(p)
    p.add_argument("--rho", type=_rho, default="auto")
    p.add_argument("--gminus", "--g-minus", dest="g_minus", type=float, default=-math.inf)
    p.add_argument("--gplus", "--g-plus", dest="g_plus", type=float, default=math.inf)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--max-newton", dest="max_newton", type=int, default=50)
    _add_output(p, "json")

    p = sub.add_parser("oracle", help="exact 1D error and costs from the sine series")
    p.add_argument("--target", default="target1", choices=("target1", "target2", "target3"))
    p.add_argument("--reg", "--mode", dest="mode", default="h1", choices=("h1", "l2"))
    p.add_argument("--rho-list", dest="rho_list", default="2^-18:-10")
    p.add_argument("--K", type=int, default=oracle1d.DEFAULT_K)
    _add_output(p)

    p = sub.add_parser("dump-mesh", help="write a uniform mesh as text")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--cells", type=int, default=4)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("dump-matrix", help="write an assembled matrix in coordinate format")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--cells", type=int, default=4)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--matrix", default="mass", choices=("mass", "stiffness", "lumped", "dual", "system"))
    p.add_argument("--mode", default="h1", choices=MODE_KINDS)
    p.add_argument("--interior", action="store_true")
    p.add_argument("-o", "--output", default="-")
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise ConfigError(f"unknown command {command!r}")


def apply_config(parser, argv: list[str]) -> list[str]:
    """Install defaults from ``--config FILE``; returns argv with the command filled in."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    try:
        with open(known.config) as fh:
            kv = parse_key_values(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    commands = set(parser._subparsers._group_actions[0].choices)
    command = kv.pop("command", None)
    given = next((a for a in argv if a in commands), None)
    if given is None:
        if command is None:
            raise ConfigError("config has no 'command' and none was given")
        # --config is the only global option, so the command can follow it directly
        rest = _strip_config(argv)
        argv = ["--config", known.config, command, *rest]
        given = command
    subparser = _subparser(parser, given)
    actions = {a.dest: a for a in subparser._actions}
    for a in subparser._actions:
        for opt in a.option_strings:
            actions.setdefault(opt.lstrip("-").replace("-", "_"), a)
    defaults = {}
    for key, raw in kv.items():
        if key not in actions or key in ("help", "h"):
            raise ConfigError(f"unknown key {key!r} for command {given!r}")
        action = actions[key]
        key = action.dest
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _bool(raw)
        else:
            if action.choices is not None and action.type is None and raw not in action.choices:
                raise ConfigError(f"{key}: {raw!r} not in {sorted(action.choices)}")
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        if action.required:
            action.required = False
    subparser.set_defaults(**defaults)
    return argv


def _strip_config(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--config":
            skip = True
        elif not a.startswith("--config="):
            out.append(a)
    return out


def _write(text: str, path: str):
    if path in ("-", None):
        sys.stdout.write(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)


def _report(rows, args, columns):
    _write(emit_report(rows, "-", args.format, columns), args.output)


def _problem_mesh(args):
    target = get_target(args.target, args.dim)
    if target.dim != args.dim:
        raise ConfigError(f"target {args.target} is {target.dim}D but --dim {args.dim}")
    a, b = target.domain
    return target, uniform_box_mesh(a, b, args.cells, args.dim)


def cmd_state(args):
    target, mesh = _problem_mesh(args)
    mode = RegularizationMode(args.mode, args.rho)
    system = build_system(mesh, mode)
    load = assembly.assemble_load(mesh, target, interior=True)
    sol = solve_state(system, load, tol=args.tol, max_it=args.max_it)
    require_converged(sol.pcg.converged, f"{sol.iterations} iterations")
    err = assembly.l2_error(mesh, sol.y_full, target)
    row = {"dofs": mesh.n_nodes, "rho": system.rho, "iterations": sol.iterations, "error_l2": err}
    _report([row], args, ["dofs", "rho", "iterations", "error_l2"])
    if args.dump:
        a, b, n = mesh.grid
        dump = {"dim": mesh.dim, "cells": n, "a": a, "b": b, "mode": args.mode, "rho": system.rho,
                "target": args.target, "y": sol.y_full.tolist()}
        with open(args.dump, "w") as fh:
            json.dump(dump, fh)


def cmd_recover(args):
    try:
        with open(args.state) as fh:
            d = json.load(fh)
        mesh = uniform_box_mesh(float(d["a"]), float(d["b"]), int(d["cells"]), int(d["dim"]))
        y_full = np.asarray(d["y"], float)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad state dump: {exc}") from exc
    if y_full.shape != (mesh.n_nodes,):
        raise ConfigError(f"state has {y_full.size} values, mesh has {mesh.n_nodes} nodes")
    y = y_full[mesh.interior]
    ctrl = recover_control(mesh, y, args.space)
    lo, hi = cost_Hminus1_bounds(mesh, y, c_S=args.c_s)
    exact = cost_Hminus1_exact_1d(ctrl) if mesh.dim == 1 else float("nan")
    row = {"rho": d.get("rho"), "cost_l2": cost_L2(ctrl), "cost_hminus1_lower": lo,
           "cost_hminus1_exact": exact, "cost_hminus1_upper": hi}
    _report([row], args, list(row))


def _config_from(args) -> ExperimentConfig:
    cfg = ExperimentConfig(command=args.command)
    for key in ("dim", "target", "mode", "cells", "levels", "rho_list", "coupling", "tol", "h_convention"):
        if hasattr(args, key):
            setattr(cfg, key, getattr(args, key))
    return cfg


def _check_levels(args):
    if args.levels < 1:
        raise ConfigError("need at least one level")
    if args.dim == 3 and args.levels > MAX_LEVEL_3D and not args.allow_deep:
        raise ConfigError(f"3D runs stop at level {MAX_LEVEL_3D}; pass --allow-deep for more")


def cmd_sweep(args):
    rows = run_sweep(_config_from(args))
    _report(rows, args, list(SWEEP_COLUMNS))


def cmd_convergence(args):
    _check_levels(args)
    table = run_convergence(_config_from(args))
    rows = [dict(r, **{"#Dofs": r["dofs"]}) for r in table.rows]
    _report(rows, args, ["level", "#Dofs", "h", "rho", "error", "eoc", "its", "time"])


def cmd_nested(args):
    _check_levels(args)
    target = get_target(args.target, args.dim)
    config = NestedConfig(target, mode=args.mode, n0=args.cells, max_levels=args.levels, eps=args.eps,
                          c_cost=args.budget, nested=not args.non_nested, tol_rule=args.tol_rule,
                          tol_factor=args.tol_factor, cost_measure=args.cost_measure,
                          lazy_recovery=args.lazy_recovery, h_convention=args.h_convention)
    table = EocTable()
    for r in run_nested(config):
        require_converged(r.extra["converged"], f"level {r.level}")
        table.add(r.level, r.dofs, r.h, r.rho, r.error, r.its, r.time, **{
            "#Dofs": r.dofs, "error_M": r.error_M, "tol": r.tol, "cost": r.cost, "stop_reason": r.stop_reason})
    _report(table.rows, args, ["level", "#Dofs", "h", "rho", "error", "eoc", "its", "error_M", "tol", "cost",
                               "stop_reason", "time"])


def cmd_constrained(args):
    target, mesh = _problem_mesh(args)
    state = solve_constrained(mesh, target, BoxBounds(args.g_minus, args.g_plus), rho=args.rho, c=args.c,
                              max_newton=args.max_newton)
    row = {"newton_its": state.newton_iterations, "active_plus_count": int(state.active_plus.size),
           "active_minus_count": int(state.active_minus.size),
           "error_l2": assembly.l2_error(mesh, mesh.extend(state.y), target), "residual": state.residual,
           "pcg_its": state.pcg_iterations, "rho": state.rho}
    _report([row], args, list(row))


def cmd_oracle(args):
    rows = [oracle1d.oracle_row(args.target, args.mode, rho, args.K) for rho in parse_rho_list(args.rho_list)]
    _report(rows, args, ["rho", "error", "cost_h", "cost_l2", "tail_bound"])


def _box(args):
    if not args.b > args.a:
        raise ConfigError("need b > a")
    return uniform_box_mesh(args.a, args.b, args.cells, args.dim)


def cmd_dump_mesh(args):
    mesh = _box(args)
    write_mesh(mesh, sys.stdout if args.output == "-" else args.output)


def cmd_dump_matrix(args):
    mesh = _box(args)
    kind = args.matrix
    if kind == "mass":
        A = assembly.assemble_mass(mesh, interior=args.interior)
    elif kind == "stiffness":
        A = assembly.assemble_stiffness(mesh, interior=args.interior)
    elif kind == "lumped":
        A = sp.diags(assembly.assemble_lumped_mass(mesh, interior=args.interior))
    elif kind == "dual":
        A = assembly.assemble_dual_mass(mesh, interior=args.interior)
    else:
        A = build_system(mesh, args.mode).dense()
    write_coo(A, sys.stdout if args.output == "-" else args.output)


COMMANDS = {
    "state": cmd_state, "recover": cmd_recover, "sweep": cmd_sweep, "convergence": cmd_convergence,
    "nested": cmd_nested, "constrained": cmd_constrained, "oracle": cmd_oracle,
    "dump-mesh": cmd_dump_mesh, "dump-matrix": cmd_dump_matrix,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = apply_config(parser, argv)
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"ocpfem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"ocpfem: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"ocpfem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

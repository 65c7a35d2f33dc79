"""Command line entry point: ``thermohom <subcommand> [--config PATH] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import presets
from .cell import solve_cell_problems
from .config import RunConfig, parse_config, replace, with_sweep
from .errors import ThermohomError
from .geometry import parse_epsilon
from .limit import run_limit
from .micro import run
from .operators import operator_algebra_suite
from .study import (build_limit_problem, build_micro_problem, check_acceptance, make_run_dir, run_study,
                    summary_lines, write_outputs)


def _load(args) -> RunConfig:
    flags = {}
    if getattr(args, "deterministic", False):
        flags["deterministic"] = True
    if getattr(args, "workers", None):
        flags["workers"] = args.workers
    if getattr(args, "out", None):
        flags["output_dir"] = args.out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = parse_config(args.config) if args.config else RunConfig()
        if getattr(args, "sweep", None):
            cfg = with_sweep(cfg, [e for e in args.sweep.split(",") if e.strip()])
        cfg = replace(cfg, flags=flags)     # also validates the defaults
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return cfg


def _report_checks(checks) -> bool:
    ok = True
    for name, passed, detail in checks:
        print(f"  [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        ok &= bool(passed)
    return ok


def cmd_cell(args) -> int:
    cfg = _load(args)
    cell = cfg.cell()
    tensor = solve_cell_problems(cell, presets.coefficient(cfg.physics.D, cell.m), tol=cfg.discretization.tol)
    run_dir = make_run_dir(cfg.flags.output_dir, cfg.config_hash(), "cell")
    (run_dir / "d_eff.csv").write_text(tensor.to_csv())
    (run_dir / "correctors.csv").write_text(tensor.basis_csv())
    print("d_eff =")
    for row in tensor.d_eff:
        print("  " + "  ".join(f"{v: .10f}" for v in row))
    print(f"|Y*| = {cell.volume:.6g}, |dT| = {cell.perimeter:.6g}, asymmetry = {tensor.asymmetry:.2e}")
    print(f"written to {run_dir}")
    ev = tensor.eigenvalues()
    return 0 if ev.min() > 0 else 1


def _pick_epsilon(cfg, value) -> int:
    return parse_epsilon(value) if value else cfg.n_max


def cmd_micro(args) -> int:
    cfg = _load(args)
    n = _pick_epsilon(cfg, args.epsilon)
    problem = build_micro_problem(cfg, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = run(problem)
    run_dir = make_run_dir(cfg.flags.output_dir, cfg.config_hash(), f"micro_eps1-{n}")
    (run_dir / "diagnostics.jsonl").write_text(traj.diagnostics_jsonl())
    (run_dir / "final_snapshot.csv").write_text(traj.snapshot_csv(len(traj.times) - 1))
    summary = {"epsilon": 1.0 / n, "min": traj.min_value(), "max": traj.max_value(),
               "bound_norm": traj.bound_norm(), "positivity_flags": traj.flags, "notes": traj.notes,
               "config_hash": cfg.config_hash()}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"eps = 1/{n}: min {summary['min']:.6g}, max {summary['max']:.6g}, "
          f"bound norm {summary['bound_norm']:.6g}")
    print(f"written to {run_dir}")
    return 0 if summary["min"] >= -problem.tol_pos else 1


def cmd_limit(args) -> int:
    cfg = _load(args)
    cell = cfg.cell()
    tensor = solve_cell_problems(cell, presets.coefficient(cfg.physics.D, cell.m))
    sign = args.sign if args.sign is not None else cfg.physics.sign_limit_exchange
    traj = run_limit(build_limit_problem(cfg, tensor, sign, cell))
    run_dir = make_run_dir(cfg.flags.output_dir, cfg.config_hash(), f"limit_sign{sign:+d}")
    (run_dir / "diagnostics.jsonl").write_text(traj.diagnostics_jsonl())
    (run_dir / "final_snapshot.csv").write_text(traj.snapshot_csv(len(traj.times) - 1))
    last = traj.diagnostics[-1]
    print(f"limit run sign {sign:+d}: u in [{last['u_min']:.6g}, {last['u_max']:.6g}], "
          f"Theta in [{last['Theta_min']:.6g}, {last['Theta_max']:.6g}] at t = {last['t']:g}")
    print(f"written to {run_dir}")
    finite = all(np.isfinite(u).all() for u in traj.u)
    return 0 if finite else 1


def cmd_study(args) -> int:
    cfg = _load(args)
    report = run_study(cfg, log=(lambda msg: print(msg, flush=True)) if args.verbose else None)
    run_dir = write_outputs(report, cfg.flags.output_dir)
    print("\n".join(summary_lines(report)))
    ok = _report_checks(check_acceptance(report))
    print(f"report written to {run_dir / 'report.json'}")
    return 0 if ok else 1


def cmd_ops_check(args) -> int:
    cfg = _load(args)
    cell = cfg.cell()
    records = operator_algebra_suite(cell, cfg.inverse_epsilons if args.full else (4, 8),
                                     reaction=presets.reaction(cfg.physics.reaction))
    run_dir = make_run_dir(cfg.flags.output_dir, cfg.config_hash(), "ops-check")
    (run_dir / "ops_check.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    width = max(len(r["identity"]) for r in records)
    ok = True
    for r in records:
        print(f"  [{'PASS' if r['passed'] else 'FAIL'}] {r['identity']:<{width}}  eps={r['epsilon']:<5} "
              f"rel. error {r['rel_error']:.2e}")
        ok &= r["passed"]
    return 0 if ok else 1


def cmd_presets(args) -> int:
    print(presets.listing(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults are used when omitted)")
    common.add_argument("--out", help="output directory (overrides [flags] output_dir)")
    common.add_argument("--deterministic", action="store_true", help="omit runtimes so reports are reproducible")
    common.add_argument("--workers", type=int, help="worker processes for the epsilon sweep")
    common.add_argument("--sweep", help='comma separated epsilons, e.g. "1/4,1/8,1/16,1/32"')

    parser = argparse.ArgumentParser(prog="thermohom",
                                     description="Homogenization of coupled transport in perforated media.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("cell", parents=[common], help="effective diffusion tensor only")
    p.set_defaults(func=cmd_cell)
    p = sub.add_parser("micro", parents=[common], help="single microscale run")
    p.add_argument("--epsilon", help="epsilon to run (default: smallest in the sweep)")
    p.set_defaults(func=cmd_micro)
    p = sub.add_parser("limit", parents=[common], help="limit system run")
    p.add_argument("--sign", type=int, choices=(1, -1), help="sign of the boundary exchange term")
    p.set_defaults(func=cmd_limit)
    p = sub.add_parser("study", parents=[common], help="full convergence study")
    p.add_argument("-v", "--verbose", action="store_true", help="print progress")
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("ops-check", parents=[common], help="operator algebra exactness suite")
    p.add_argument("--full", action="store_true", help="check every epsilon of the sweep")
    p.set_defaults(func=cmd_ops_check)
    p = sub.add_parser("presets", help="list the named presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ThermohomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver.

Subcommands::

    twoscale validate --config case_a.ini
    twoscale solve    --config case_a.ini --out results/ --threads 4
    twoscale mms      --config mms.ini --sweep 8,11,16
    twoscale bench    --config bench_fine_micro.ini --sweep 1,2,4,8

``--config`` accepts a path or the name of a bundled config (``case_a``,
``case_b``, ``mms``, ``bench_fine_macro``, ``bench_fine_micro``).
Exit codes: 0 success, 2 configuration error, 3 validation failure,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import expr as ex
from .coupled import TwoScaleProblem
from .fileio import (BenchReport, BenchRow, Config, ConfigError, bundled_config, load_config, write_csv,
                     write_vtk_macro, write_vtk_micro)
from .linalg import ConvergenceError
from .mapping import DegenerateMapError, check_coercivity, validate
from .parallel import default_workers

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NONCONVERGENCE = 4

RESIDUAL_GATE = 1e-6

log = logging.getLogger("twoscale")


@dataclass
class RunPlan:
    command: str
    config: Config
    out: Path
    threads: int
    sweep: tuple[int, ...]

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"worker count must be >= 1, got {self.threads}")


def _resolve_config(text: str) -> Config:
    path = Path(text)
    if not path.exists() and not path.suffix:
        try:
            path = bundled_config(text)
        except ConfigError:
            pass
    return load_config(path)


def _parse_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("list must be non-empty with entries >= 1")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twoscale", description="Two-scale finite element solver.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("validate", "check the map and parameter relations"),
                            ("solve", "solve the coupled system and write VTK/CSV output"),
                            ("mms", "manufactured-solution convergence sweep"),
                            ("bench", "wall time versus worker count")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, help="config file or bundled config name")
        s.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $TWOSCALE_THREADS, then CPU count)")
        s.add_argument("--out", default=None, help="output directory (default: [output] dir)")
        s.add_argument("--sweep", type=_parse_list, default=None,
                       help="grid sizes (mms) or thread counts (bench), e.g. 8,11,16")
        s.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    return p


def make_plan(args: argparse.Namespace) -> RunPlan:
    cfg = _resolve_config(args.config)
    if args.threads is not None:
        threads = args.threads
    elif cfg.threads is not None:
        threads = cfg.threads
    else:
        try:
            threads = default_workers()
        except ValueError:
            raise ConfigError(f"TWOSCALE_THREADS must be an integer, got {os.environ.get('TWOSCALE_THREADS')!r}")
    if args.sweep:
        sweep = args.sweep
    elif args.command == "mms":
        sweep = cfg.sweep or (cfg.macro_n,)
    elif args.command == "bench":
        sweep = cfg.bench_threads
    else:
        sweep = ()
    return RunPlan(args.command, cfg, Path(args.out or cfg.out_dir), threads, tuple(sweep))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def run_validate(plan: RunPlan, stream=None) -> int:
    """Print map, parameter and role checks; return an exit code."""
    stream = stream or sys.stdout
    cfg = plan.config
    macro, micro = cfg.macro_grid(), cfg.micro_grid()
    hard = []
    try:
        diffeo = cfg.diffeo()
        rep = validate(diffeo, cfg.bounds(), macro.nodes, micro.nodes)
        print(rep.summary(), file=stream)
        if not rep.passed:
            x, y, det = rep.failures[0]
            hard.append(f"Jacobian determinant {det:.6g} outside bounds at x = {x}, yhat = {y}")
    except (DegenerateMapError, ex.ExprError, ArithmeticError) as err:
        hard.append(f"map evaluation failed: {err}")
        diffeo = None

    roles = cfg.roles()
    print("roles: macro dirichlet = " + ", ".join(s.value for s in cfg.dirichlet)
          + "; micro gamma_i = " + ", ".join(s.value for s in cfg.gamma_i)
          + "; gamma_o = " + ", ".join(s.value for s in cfg.gamma_o), file=stream)
    if not cfg.dirichlet:
        print("WARNING: no macro Dirichlet side; u is determined only through the Robin mass", file=stream)

    try:
        dw = ex.evaluate_on(cfg.expr(cfg.Dw), dict(cfg.params, x0=macro.nodes[:, 0], x1=macro.nodes[:, 1]),
                            (macro.n_nodes,))
        if np.any(dw <= 0):
            hard.append(f"Dw must be positive; min over macro nodes is {dw.min():.6g}")
    except (ex.ExprError, ArithmeticError) as err:
        hard.append(f"Dw evaluation failed: {err}")
        dw = None

    if diffeo is not None and dw is not None and not hard:
        report = check_coercivity(cfg.kappa, dw, diffeo, macro.nodes, roles, micro, log_warnings=False)
        print(f"coercivity condition 1: max |k1-k2|/2*|Gamma_I| = {report.lhs1.max():.4g}, bound 1: "
              f"{'holds' if report.holds1.all() else 'violated'}", file=stream)
        print(f"coercivity condition 2: max |k3-k4|/2*|Gamma_O| = {report.lhs2.max():.4g}, "
              f"bound min Dw = {report.min_dw:.4g}: "
              f"{'holds' if report.holds2.all() else 'violated'}", file=stream)
        for w in report.warnings:
            print("WARNING: " + w, file=stream)

    for h in hard:
        print("ERROR: " + h, file=stream)
    return EXIT_VALIDATION if hard else EXIT_OK


def run_solve(plan: RunPlan, stream=None) -> int:
    stream = stream or sys.stdout
    code = run_validate(plan, stream)
    if code != EXIT_OK:
        return code
    cfg = plan.config
    macro, micro = cfg.macro_grid(), cfg.micro_grid()
    problem = TwoScaleProblem(cfg.problem_data(), macro, micro, workers=plan.threads, tol_inner=cfg.tol_inner)
    for note in problem.notes:
        print("NOTE: " + note, file=stream)
    t0 = time.perf_counter()
    state = problem.solve(tol_outer=cfg.tol_outer, max_outer=cfg.max_outer, raise_on_failure=False)
    elapsed = time.perf_counter() - t0
    plan.out.mkdir(parents=True, exist_ok=True)
    write_csv(state, plan.out / "residuals.csv")
    if not state.converged:
        print(f"ERROR: no convergence in {cfg.max_outer} sweeps; residual trace:", file=stream)
        for k, r in enumerate(state.residual_history, 1):
            print(f"  {k:4d} {r:.6e}", file=stream)
        return EXIT_NONCONVERGENCE
    write_vtk_macro(macro, {"u": state.uvec, "w": state.wvec}, plan.out / "macro.vtk")
    write_vtk_micro(state, macro, micro, cfg.diffeo(), cfg.micro_viz_scale, plan.out / "micro.vtk")
    print(f"converged in {state.sweeps} sweeps ({elapsed:.2f} s), final residual "
          f"{state.residual_history[-1]:.3e}", file=stream)
    print(f"u in [{state.uvec.min():.6g}, {state.uvec.max():.6g}], "
          f"w in [{state.wvec.min():.6g}, {state.wvec.max():.6g}]", file=stream)
    print(f"wrote {plan.out / 'macro.vtk'}, {plan.out / 'micro.vtk'}, {plan.out / 'residuals.csv'}", file=stream)
    return EXIT_OK


def run_mms(plan: RunPlan, stream=None) -> int:
    from .verify import convergence_sweep, derive_data, residual_check

    stream = stream or sys.stdout
    cfg = plan.config
    case = cfg.manufactured_case()
    res = residual_check(case, derive_data(case))
    print(f"manufactured data residual check: {res:.3e}", file=stream)
    if res > RESIDUAL_GATE:
        print(f"ERROR: residual {res:.3e} exceeds {RESIDUAL_GATE:.0e}; not solving", file=stream)
        return EXIT_VALIDATION
    report = convergence_sweep(case, plan.sweep, workers=plan.threads, tol_outer=cfg.tol_outer,
                               max_outer=cfg.max_outer, tol_inner=cfg.tol_inner, domain=cfg.macro_domain())

    def f(v):
        return "-" if v is None else f"{v:.3f}"

    print(f"{'MDoFs':>6} {'H':>9} {'e_uw':>9} {'e_uw_grad':>9} {'p_M':>6} {'q_M':>6} "
          f"{'e_v':>9} {'e_v_grad':>9} {'p_m':>6} {'q_m':>6}", file=stream)
    for r in report.rows:
        print(f"{r.macro_dofs:6d} {r.H:9.3e} {r.e_uw:9.3e} {r.e_uw_grad:9.3e} {f(r.p_M):>6} {f(r.q_M):>6} "
              f"{r.e_v:9.3e} {r.e_v_grad:9.3e} {f(r.p_m):>6} {f(r.q_m):>6}", file=stream)
    path = write_csv(report, plan.out / "mms.csv")
    print(f"wrote {path}", file=stream)
    return EXIT_OK


def time_solve(cfg: Config, threads: int) -> float:
    """Wall time of assembly plus the fixed-point solve."""
    data = cfg.problem_data()
    macro, micro = cfg.macro_grid(), cfg.micro_grid()
    t0 = time.perf_counter()
    problem = TwoScaleProblem(data, macro, micro, workers=threads, tol_inner=cfg.tol_inner)
    problem.solve(tol_outer=cfg.tol_outer, max_outer=cfg.max_outer)
    return time.perf_counter() - t0


def run_bench(plan: RunPlan, stream=None) -> int:
    stream = stream or sys.stdout
    cfg = plan.config
    report = BenchReport(cfg.name)
    base = None
    print(f"{'threads':>7} {'wall_seconds':>12} {'speedup':>8}", file=stream)
    for n in plan.sweep:
        t = time_solve(cfg, n)
        base = t if base is None else base
        row = BenchRow(n, t, base / t)
        report.rows.append(row)
        print(f"{row.threads:7d} {row.wall_seconds:12.3f} {row.speedup:8.3f}", file=stream)
    if plan.sweep and plan.sweep[0] != 1:
        print("note: speedup is relative to the first thread count in the sweep", file=stream)
    path = write_csv(report, plan.out / "bench.csv")
    print(f"wrote {path} (hardware threads available: {os.cpu_count()})", file=stream)
    return EXIT_OK


COMMANDS = {"validate": run_validate, "solve": run_solve, "mms": run_mms, "bench": run_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        plan = make_plan(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[plan.command](plan)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateMapError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())

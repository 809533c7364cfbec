"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line (collected again in the terminal
summary) and then asserts the same condition.
"""

from __future__ import annotations

import dataclasses
import io
import os

import numpy as np
import pytest

import transform_checks as tc
from conftest import MMS_SWEEP, record_acceptance
from oracles import direct_micro_matrix
from twoscale import cli
from twoscale import expr as ex
from twoscale.coupled import ProblemData, TwoScaleProblem
from twoscale.fileio import bundled_config, load_config
from twoscale.geometry import BoundaryRoles, RectDomain, Side, build_grid
from twoscale.mapping import Diffeo
from twoscale.verify import ManufacturedCase, derive_data, residual_check

SQ = RectDomain()


def check(number, title, passed, detail):
    record_acceptance(number, title, bool(passed), detail)
    assert passed, detail


# 1 -----------------------------------------------------------------------------------


def test_criterion_01_mms_orders(mms_report):
    last = mms_report.last
    orders = dict(p_M=last.p_M, p_m=last.p_m, q_M=last.q_M, q_m=last.q_m)
    ok = (len(mms_report) == len(MMS_SWEEP)
          and all(1.8 <= orders[k] <= 2.3 for k in ("p_M", "p_m"))
          and all(0.9 <= orders[k] <= 1.3 for k in ("q_M", "q_m")))
    seconds = sum(r.seconds for r in mms_report.rows)
    detail = ", ".join(f"{k} = {v:.3f}" for k, v in orders.items())
    check(1, "MMS convergence orders", ok,
          f"{detail} on the {MMS_SWEEP[-2]} -> {MMS_SWEEP[-1]} increment (sweep {seconds:.0f} s)")


# 2 -----------------------------------------------------------------------------------


def test_criterion_02_mms_error_magnitude(mms_report):
    first = mms_report.rows[0]
    ok = (first.macro_dofs == 81 and first.micro_dofs == 81
          and 7.115e-3 / 3 <= first.e_uw <= 3 * 7.115e-3
          and 6.191e-3 / 3 <= first.e_v <= 3 * 6.191e-3)
    check(2, "MMS error magnitude at n = 8", ok,
          f"e_uw = {first.e_uw:.4e} (ratio {first.e_uw / 7.115e-3:.2f}), "
          f"e_v = {first.e_v:.4e} (ratio {first.e_v / 6.191e-3:.2f})")


# 3 -----------------------------------------------------------------------------------


def test_criterion_03_identity_transparency():
    roles = BoundaryRoles.from_lists([Side.LEFT], [Side.LEFT], [Side.RIGHT])
    worst = 0.0
    for n in (1, 4, 9):
        data = ProblemData(kappa=(0.5, 1.0, 0.25, 1.0), Dv=1.3, Dw=ex.parse("0.1"), diffeo=Diffeo.identity(),
                           roles=roles)
        problem = TwoScaleProblem(data, build_grid(SQ, 2), build_grid(SQ, n))
        ref = direct_micro_matrix(n, np.eye(2), 1.3, {Side.LEFT: (1.0, 1.0), Side.RIGHT: (1.0, 1.0)})
        for i in range(problem.N):
            got = problem.micro_system(i, 0.0, 0.0).matrix.toarray()
            worst = max(worst, float(np.max(np.abs(got - ref))))
    check(3, "identity-map transparency", worst <= 1e-12, f"max entrywise difference {worst:.2e} (tol 1e-12)")


# 4 -----------------------------------------------------------------------------------


def test_criterion_04_transformation_identities():
    lin = tc.linear_map_errors()
    coarse, fine = tc.nonlinear_map_errors(8), tc.nonlinear_map_errors(32)
    lin_ok = all(v <= 1e-10 for v in lin.values())
    nonlin_ok = all(fine[k] <= 1e-6 and fine[k] < coarse[k] for k in fine)
    detail = (f"linear map max {max(lin.values()):.1e} (tol 1e-10, divergence {lin['divergence']:.1e}); "
              f"nonlinear map n=8 max {max(coarse.values()):.1e} -> n=32 max {max(fine.values()):.1e} (tol 1e-6)")
    check(4, "transformation identities", lin_ok and nonlin_ok, detail)


# 5 -----------------------------------------------------------------------------------

PRINTED_FLUX = {
    Side.LEFT: "0.6690*y0*y1 - 0.6690*y0*(1 - y1) - 0.7432*y1*(1 - y1)",
    Side.RIGHT: "-0.6690*y0*y1 + 0.6690*y0*(1 - y1) + 0.7432*y1*(1 - y1)",
    Side.TOP: "-0.9778*y0*y1 + 0.9778*y0*(1 - y1) + 0.2095*y1*(1 - y1)",
}


def test_criterion_05_manufactured_data():
    case = ManufacturedCase.reference()
    data = derive_data(case)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for side, text in PRINTED_FLUX.items():
        x = rng.uniform(-1, 1, (20, 2))
        t = rng.uniform(-1, 1, 20)
        one = np.ones(20)
        yhat = {Side.LEFT: np.stack([-one, t], -1), Side.RIGHT: np.stack([one, t], -1),
                Side.TOP: np.stack([t, one], -1)}[side]
        env = dict(x0=x[:, 0], x1=x[:, 1], y0=yhat[:, 0], y1=yhat[:, 1], Dv=1.0,
                   kappa1=0.0, kappa2=0.0, kappa3=0.0, kappa4=0.0)
        y = case.diffeo(x, yhat)
        printed = ex.evaluate(ex.parse(text), dict(y0=y[:, 0], y1=y[:, 1]))
        worst = max(worst, float(np.max(np.abs(ex.evaluate(data.gv[side], env) - printed))))
    res = residual_check(case, data)
    check(5, "manufactured-data fidelity", worst <= 5e-4 and res <= 1e-8,
          f"max |g^v - printed| = {worst:.2e} (tol 5e-4), residual = {res:.2e} (tol 1e-8)")


# 6 -----------------------------------------------------------------------------------


def _mirror(nodes):
    return np.array([int(np.flatnonzero(np.all(np.isclose(nodes, [a, -b]), axis=1))[0]) for a, b in nodes])


def test_criterion_06_case_a_b(case_a, case_b):
    wa, wb = case_a.state.wvec, case_b.state.wvec
    mirror = _mirror(case_a.problem.macro.nodes)
    sym_a = float(np.max(np.abs(wa - wa[mirror])))
    asym_b = float(np.max(np.abs(wb - wb[_mirror(case_b.problem.macro.nodes)])))
    range_a, range_b = float(np.ptp(wa)), float(np.ptp(wb))
    ok = (case_a.state.converged and case_b.state.converged and sym_a <= 1e-10 and asym_b >= 1e-3
          and range_b > range_a and case_a.seconds <= 300 and case_b.seconds <= 300)
    check(6, "Case A/B microstructure effect", ok,
          f"A asymmetry {sym_a:.1e} (tol 1e-10), B asymmetry {asym_b:.2e} (>= 1e-3), "
          f"range A {range_a:.2e} < range B {range_b:.2e}; {case_a.seconds:.0f} s / {case_b.seconds:.0f} s")


# 7 -----------------------------------------------------------------------------------


def test_criterion_07_parallel_scaling(tmp_path):
    cpus = os.cpu_count() or 1
    if cpus < 8:
        record_acceptance(7, "parallel scaling", None,
                          f"needs >= 8 hardware threads, this machine has {cpus}; not measured")
        pytest.skip(f"speedup criterion needs >= 8 hardware threads (found {cpus})")
    cfg = load_config(bundled_config("bench_fine_micro"))
    t1 = cli.time_solve(cfg, 1)
    t8 = cli.time_solve(cfg, 8)
    fine_macro = load_config(bundled_config("bench_fine_macro"))
    m1, m8 = cli.time_solve(fine_macro, 1), cli.time_solve(fine_macro, 8)
    check(7, "parallel scaling", t1 / t8 >= 3.0,
          f"coarse-macro/fine-micro speedup {t1 / t8:.2f} at 8 workers (>= 3.0); "
          f"fine-macro/coarse-micro {m1 / m8:.2f} (reported only)")


# 8 -----------------------------------------------------------------------------------


def test_criterion_08_constant_compatibility():
    roles = BoundaryRoles.from_lists([Side.LEFT], [Side.LEFT], [Side.RIGHT])
    kappa = (0.5, 1.0, 0.25, 1.0)
    c = 1.7
    worst = 0.0
    maps = (Diffeo.identity(), Diffeo.from_strings(*tc.LINEAR_MAP),
            load_config(bundled_config("case_b")).diffeo())
    for d in maps:
        for n in (1, 2, 4, 8, 16, 32, 64):
            data = ProblemData(kappa=kappa, Dv=1.0, Dw=ex.ONE, diffeo=d, roles=roles)
            problem = TwoScaleProblem(data, build_grid(SQ, 2), build_grid(SQ, n))
            u = np.full(problem.N, c * kappa[1] / kappa[0])
            w = np.full(problem.N, c * kappa[3] / kappa[2])
            V = problem.solve_micro(u, w, tol=1e-15)
            worst = max(worst, float(np.max(np.abs(V - c))))
    check(8, "analytic constant micro solution", worst <= 1e-10,
          f"max |v - c| = {worst:.2e} over 3 maps and n in 1..64 (tol 1e-10)")


# 9 -----------------------------------------------------------------------------------


def test_criterion_09_validator():
    summary = []
    ok = True
    for name in ("case_a", "case_b"):
        args = cli.build_parser().parse_args(["validate", "--config", name])
        buf = io.StringIO()
        code = cli.run_validate(cli.make_plan(args), buf)
        lines = buf.getvalue().splitlines()
        warnings = [ln for ln in lines if ln.startswith("WARNING")]
        errors = [ln for ln in lines if ln.startswith("ERROR")]
        ok &= (code == cli.EXIT_OK and len(warnings) == 1 and "second inequality" in warnings[0] and not errors)
        summary.append(f"{name}: exit {code}, {len(warnings)} warning(s), {len(errors)} error(s)")
    check(9, "coercivity validator", ok, "; ".join(summary))


# 10 ----------------------------------------------------------------------------------


def test_criterion_10_decoupled_limit():
    cfg = dataclasses.replace(load_config(bundled_config("case_b")), kappa=(0.0, 0.0, 0.0, 0.0), fv="y0", fw="1")
    problem = TwoScaleProblem(cfg.problem_data(), cfg.macro_grid(), cfg.micro_grid(), tol_inner=cfg.tol_inner)
    state = problem.solve(tol_outer=cfg.tol_outer, max_outer=cfg.max_outer, raise_on_failure=False)
    check(10, "decoupled limit", state.converged and state.sweeps <= 2,
          f"converged = {state.converged} after {state.sweeps} sweep(s) (limit 2)")

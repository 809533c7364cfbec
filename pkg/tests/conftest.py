from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from twoscale.coupled import TwoScaleProblem, TwoScaleState
from twoscale.fileio import Config, bundled_config, load_config
from twoscale.verify import ErrorReport, ManufacturedCase, convergence_sweep

MMS_SWEEP = (8, 11, 16, 23, 32)


@dataclass
class CaseRun:
    config: Config
    problem: TwoScaleProblem
    state: TwoScaleState
    seconds: float


def run_config(name: str) -> CaseRun:
    cfg = load_config(bundled_config(name))
    t0 = time.perf_counter()
    problem = TwoScaleProblem(cfg.problem_data(), cfg.macro_grid(), cfg.micro_grid(), workers=cfg.threads or 1,
                              tol_inner=cfg.tol_inner)
    state = problem.solve(tol_outer=cfg.tol_outer, max_outer=cfg.max_outer)
    return CaseRun(cfg, problem, state, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def case_a() -> CaseRun:
    return run_config("case_a")


@pytest.fixture(scope="session")
def case_b() -> CaseRun:
    return run_config("case_b")


@pytest.fixture(scope="session")
def mms_report() -> ErrorReport:
    """Full manufactured-solution sweep with equal macro and micro resolution."""
    return convergence_sweep(ManufacturedCase.reference(), MMS_SWEEP)


# ---- acceptance summary ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool | None, detail: str) -> str:
    """Store and print one status line; ``passed=None`` marks a criterion not applicable here."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"{status} criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

import numpy as np
import pytest

from degenerate_control.mesh import build_grid
from degenerate_control.profile import make_constant_profile, make_power_profile
from degenerate_control.solver import ControlProblem

OMEGA = (0.3, 0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return build_grid(31, 40, 0.5)


@pytest.fixture
def power_profile():
    return make_power_profile(0.4, 0.6, 2.0, 2.0)


@pytest.fixture
def heat_profile():
    return make_constant_profile(1.0)


@pytest.fixture
def small_problem(power_profile, small_grid):
    return ControlProblem(power_profile, OMEGA, small_grid.T, np.sin(np.pi * small_grid.x))


# one pass/fail line per acceptance criterion, printed after the run
_RESULTS: dict = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _RESULTS[props["criterion"]] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        outcome, detail = _RESULTS[key]
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {key:<3} {mark}  {detail}")

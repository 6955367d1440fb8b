import math
import sys
from pathlib import Path

import numpy as np
import pytest

from pfatlas.caseio import load_case, parse_case
from pfatlas.gpfmodel import build_gpf
from pfatlas.netmatrix import build_admittance, build_quadratic_forms

FIXTURES = Path(__file__).parent / "fixtures"


def two_bus_text(p_d_mw: float = 0.0, b_sh_mvar: float = 0.0, q_d_mvar: float = 0.0) -> str:
    """Slack bus 1 at 1.0/0 deg feeding PQ bus 2 through a lossless x=0.1 line."""
    return f"""function mpc = twobus
mpc.baseMVA = 100;
mpc.bus = [
    1   3   0   0   0   {b_sh_mvar}   1   1   0   1   1   1.1   0.9;
    2   1   {p_d_mw}   {q_d_mvar}   0   0   1   1   0   1   1   1.1   0.9;
];
mpc.gen = [
    1   0   0   0   0   1   100   1;
];
mpc.branch = [
    1   2   0   0.1   0   0   0   0   0   0   1;
];
"""


def two_bus(p_in: float = 0.0):
    """2-bus fixture with net injection ``p_in`` (per-unit) at the PQ bus."""
    return parse_case(two_bus_text(p_d_mw=-100.0 * p_in))


def two_bus_oracle(p_in: float) -> list[np.ndarray]:
    """All real roots by elimination: f2 = p_in/10 and e2^2 - e2 + f2^2 = 0."""
    f2 = p_in / 10.0
    disc = 1.0 - 4.0 * f2 * f2
    if disc < 0:
        return []
    roots = {(1 + math.sqrt(disc)) / 2, (1 - math.sqrt(disc)) / 2}
    return [np.array([1.0, e2, 0.0, f2]) for e2 in sorted(roots)]


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def forms9(case9):
    return build_quadratic_forms(build_admittance(case9))


@pytest.fixture(scope="session")
def gpf9(case9, forms9):
    return build_gpf(case9, forms9)


# Published 9-bus solution table: one column per solution, rows are buses 1..9.
TABLE4_VM = np.array([
    [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000],
    [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000],
    [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000],
    [0.987, 0.857, 0.642, 0.653, 0.650, 0.593, 0.502, 0.468],
    [0.975, 0.767, 0.604, 0.706, 0.089, 0.134, 0.166, 0.139],
    [1.003, 0.681, 0.662, 0.901, 0.794, 0.585, 0.591, 0.785],
    [0.986, 0.077, 0.099, 0.810, 0.826, 0.108, 0.113, 0.756],
    [0.996, 0.582, 0.468, 0.779, 0.885, 0.539, 0.488, 0.775],
    [0.958, 0.709, 0.168, 0.121, 0.678, 0.487, 0.211, 0.195],
]).T
TABLE4_VA = np.array([
    [0.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000],
    [9.669, 13.121, 38.188, -5.605, -11.276, -3.312, -10.853, -66.510],
    [4.771, -8.555, -16.594, -11.017, -21.901, -74.141, -78.898, -76.575],
    [-2.407, -6.785, -10.479, -9.257, -11.126, -13.039, -15.204, -16.338],
    [-4.017, -13.577, -21.705, -16.850, -70.677, -82.206, -82.693, -92.533],
    [1.926, -12.752, -20.908, -14.184, -25.498, -79.026, -83.730, -80.215],
    [0.622, -61.709, -51.702, -17.085, -24.208, -94.276, -102.230, -80.621],
    [3.799, 3.040, 25.603, -13.121, -17.883, -14.210, -22.902, -74.063],
    [-4.350, -11.705, -46.153, -62.001, -21.313, -27.181, -56.573, -83.433],
]).T


def angle_gap(a, b):
    """Elementwise angle difference in degrees, wrapped to [-180, 180)."""
    return (np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0


def match_table4(vm, va, vm_tol=2e-3, va_tol=0.05):
    """Column index of the published solution matching (vm, va), or None."""
    for c in range(TABLE4_VM.shape[0]):
        if np.all(np.abs(vm - TABLE4_VM[c]) <= vm_tol) and np.all(np.abs(angle_gap(va, TABLE4_VA[c])) <= va_tol):
            return c
    return None


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

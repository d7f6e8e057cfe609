from __future__ import annotations

import math
import warnings

import pytest

from knudsen.collision import KernelConfig
from knudsen.grid import GridConfig, build_phase_grid

ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_support_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="support radius")
        yield


@pytest.fixture(scope="session")
def kernel():
    return KernelConfig()


@pytest.fixture(scope="session")
def grid24():
    return build_phase_grid(GridConfig(n_x=4, n_v=24, v_max=6.0))


@pytest.fixture(scope="session")
def grid32():
    return build_phase_grid(GridConfig(n_x=4, n_v=32, v_max=6.0))


@pytest.fixture(scope="session")
def small_grid():
    """Coarse grid used by nonlinear runs, where the dense bilinear tensor fits in memory."""
    return build_phase_grid(GridConfig(n_x=8, n_v=16, v_max=5.0, torus_period=2 * math.pi))


@pytest.fixture(scope="session")
def wide_grid():
    """Long torus for linear decay and dissipativity, so the hydrodynamic modes are well resolved."""
    return build_phase_grid(GridConfig(n_x=16, n_v=24, v_max=6.0, torus_period=4 * math.pi))


@pytest.fixture(scope="session")
def tiny_grid():
    return build_phase_grid(GridConfig(n_x=4, n_v=12, v_max=5.0, torus_period=2 * math.pi))

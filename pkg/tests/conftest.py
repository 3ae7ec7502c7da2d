import numpy as np
import pytest

from cutflux.adaptive import BenchmarkConfig, adaptive_loop, solve_and_estimate
from cutflux.geometry import classify_cells
from cutflux.mesh import build_structured_mesh
from cutflux.primal import SolverConfig
from cutflux.problems import linear_interface_problem, petal_problem

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def petal():
    return petal_problem()


@pytest.fixture(scope="session")
def linear():
    return linear_interface_problem()


@pytest.fixture(scope="session")
def petal_step8(petal):
    mesh = build_structured_mesh(8, 8, petal.domain)
    return solve_and_estimate(mesh, petal, SolverConfig())


@pytest.fixture(scope="session")
def petal_step16(petal):
    mesh = build_structured_mesh(16, 16, petal.domain)
    return solve_and_estimate(mesh, petal, SolverConfig())


@pytest.fixture(scope="session")
def linear_step16(linear):
    mesh = build_structured_mesh(16, 16)
    return solve_and_estimate(mesh, linear, SolverConfig())


@pytest.fixture(scope="session")
def petal_run():
    """Full adaptive petal benchmark (default configuration)."""
    import time

    t0 = time.perf_counter()
    trace = adaptive_loop(BenchmarkConfig())
    trace.wall_time = time.perf_counter() - t0
    return trace


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def structured_cut(n, level_set):
    mesh = build_structured_mesh(n, n)
    return mesh, classify_cells(mesh, level_set)

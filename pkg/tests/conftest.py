from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from coulomb_gas import metrics
from coulomb_gas.energy import GasParams
from coulomb_gas.measures import Grid
from coulomb_gas.thermal import quadratic, solve_thermal, thermal_box

# every BL solve in the suite re-checks its dual witness
metrics.VERIFY_WITNESS = True

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def solved(dim: int, n: int, nbeta: float, m: int, tol: float = 1e-10):
    V = quadratic()
    params = GasParams(dim, n, nbeta / n)
    grid = Grid.cube(dim, thermal_box(V, params, m, probe_m=min(m, 64)), m)
    return solve_thermal(V, params, grid, tol=tol, max_iter=20000)


@pytest.fixture(scope="session")
def thermal2d():
    """d=2, N=32, N beta=16 on a 64^2 grid, solved to 1e-12."""
    return solved(2, 32, 16.0, 64, tol=1e-12)


@pytest.fixture(scope="session")
def thermal3d():
    """d=3, N=8, N beta=8 on a 24^3 grid."""
    return solved(3, 8, 8.0, 24, tol=1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

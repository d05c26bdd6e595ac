import numpy as np
import pytest

from qkinetic.collision import CollisionWorkspace
from qkinetic.core import ModelParams, SphereQuadrature, VelocityGrid


@pytest.fixture(scope="session")
def sphere():
    return SphereQuadrature.product_rule(4, 8)


@pytest.fixture(scope="session")
def tiny_grid():
    return VelocityGrid(4.0, 5)


@pytest.fixture(scope="session")
def small_grid():
    return VelocityGrid(6.0, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def make_ws(sphere):
    """Workspace factory; geometry tables are shared across parameter sets."""

    def make(vgrid, delta=1.0, rho=1.0, **kw):
        return CollisionWorkspace(vgrid, sphere, ModelParams(delta=delta, rho=rho), **kw)

    return make


def admissible_perturbation(ws, rng, amplitude=0.3):
    """f with mu + sqrt(mu_bar) f strictly inside [0, 1/delta]."""
    return amplitude * rng.uniform(-1.0, 1.0, ws.vgrid.size) * ws.tables.mu_bar_sqrt


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

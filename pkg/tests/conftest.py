import numpy as np
import pytest
from hypothesis import settings

from anisons.spectral import Grid, SpectralVelocity, leray_project, SpectralVector

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid32():
    return Grid(32, 32)


@pytest.fixture(scope="session")
def grid16():
    return Grid(16, 16)


def from_physical_velocity(u1, u2, grid):
    """Velocity from physical components, projected and dealiased."""
    c = SpectralVector.from_physical(np.stack([u1, u2]), grid)
    p = leray_project(c)
    return SpectralVelocity(p.coeffs * grid.mask, grid)


ACCEPTANCE = []


def report(name, passed, detail):
    """Record one acceptance line; all of them are printed in the terminal summary."""
    line = f"{name} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

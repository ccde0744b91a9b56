import numpy as np
import pytest

from fadxrf.core import EnergyCalibration, load_line_table
from fadxrf.synthetic import preset, render_cube, truth_pulse_matrix

# filled by test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def cal():
    return EnergyCalibration()


@pytest.fixture(scope="session")
def table(cal):
    return load_line_table(cal)


@pytest.fixture(scope="session")
def shapes_scene():
    p = preset("shapes")
    cube, truth = render_cube(p)
    return p, cube, truth, truth_pulse_matrix(p)


@pytest.fixture(scope="session")
def shapes_poisson_scene():
    p = preset("shapes", noise="poisson", seed=0)
    cube, truth = render_cube(p)
    return p, cube, truth, truth_pulse_matrix(p)


@pytest.fixture(scope="session")
def cu_zn_scene():
    p = preset("cu_zn_overlap")
    cube, truth = render_cube(p)
    return p, cube, truth, truth_pulse_matrix(p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

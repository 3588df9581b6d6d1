import numpy as np
import pytest

from openarc.geometry import build_coarse_mesh, build_geometry
from openarc.solver import ProblemSpec

GOLDEN_TARGET = 0.17 + 0.62j
GOLDEN_VALUE = 0.02788626934981090 - 0.75932847390327920j
GOLDEN_K = 3.0

# acceptance lines collected by test_acceptance and echoed at the end of the run
ACCEPTANCE = {}


def golden_data(z, n):
    x = np.real(z)
    return 4 * x**3 + 2 * x**2 - 3 * x - 1


@pytest.fixture(scope="session")
def segment():
    return build_geometry("segment")


@pytest.fixture(scope="session")
def segment_mesh(segment):
    return build_coarse_mesh(segment, panels=6)


@pytest.fixture(scope="session")
def golden_problem():
    return ProblemSpec("dirichlet", GOLDEN_K, data=golden_data)


@pytest.fixture(scope="session")
def circle():
    return build_geometry({"shape": "circle", "radius": 1.0})


@pytest.fixture(scope="session")
def circle_mesh(circle):
    return build_coarse_mesh(circle, panels=16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])

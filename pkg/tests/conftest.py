import numpy as np
import pytest

from certkit.model import case_study_model, noiseless, planar_submodel
from certkit.symbolic import Grid, ReachStaySpec, abstract, synthesize_reach_stay

# printed gains of the two-zone building example
L_PUBLISHED = np.array([[0.5201, 0.0333], [-0.2239, 0.0262], [0.0022, 0.8196]])
K_PUBLISHED = np.array([[13.4231, 0.9615, 0.5769], [1.0417, 14.6250, 0.4167]])
TARGET = ReachStaySpec((20.5, 20.5), (21.0, 21.0))


def random_stable(rng, n, rho=0.95):
    A = rng.standard_normal((n, n))
    r = np.max(np.abs(np.linalg.eigvals(A)))
    return A * (rho * rng.uniform(0.2, 1.0) / r)


@pytest.fixture(scope="session")
def building():
    return case_study_model()


@pytest.fixture(scope="session")
def gains(building):
    _, L, _ = building.kalman_gain()
    _, K, _ = building.lq_gain()
    return K, L


@pytest.fixture(scope="session")
def coarse_abstraction(building):
    sg = Grid([14.0, 14.0], [25.0, 25.0], 0.25)
    ig = Grid([10.0, 10.0], [30.0, 30.0], 1.0)
    return abstract(planar_submodel(noiseless(building)), sg, ig)


@pytest.fixture(scope="session")
def coarse_controller(coarse_abstraction):
    return synthesize_reach_stay(coarse_abstraction, TARGET)


# criterion number -> one-line verdict, printed after the run
ACCEPTANCE = {}


def record_verdict(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}; {detail}"
    ACCEPTANCE[number] = line
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])

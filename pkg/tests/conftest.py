import numpy as np
import pytest

from opcrash.crashdata import DatasetFile, DesignConfig, generate_doe, make_sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def one_sample():
    return make_sample(DesignConfig(v0=-7.0, thickness=0.7, offset=120.0), frames=10)


@pytest.fixture(scope="session")
def tiny_set(one_sample):
    return DatasetFile("train", one_sample.trajectory.dt, [one_sample])


@pytest.fixture(scope="session")
def small_doe():
    """Two velocities x two thicknesses, short horizon."""
    return generate_doe((2, 2, 1), frames=6)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])

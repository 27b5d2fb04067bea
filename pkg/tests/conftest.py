import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from carimesh.spatial import SpatialIndex
from carimesh.synth import head_template, landmark_vertex_ids
from carimesh.views import default_rig, default_scheme


@pytest.fixture(scope="session")
def head2():
    return head_template(2)


@pytest.fixture(scope="session")
def head3():
    return head_template(3)


@pytest.fixture(scope="session")
def index2(head2):
    return SpatialIndex(head2)


@pytest.fixture(scope="session")
def index3(head3):
    return SpatialIndex(head3)


@pytest.fixture(scope="session")
def scheme():
    return default_scheme()


@pytest.fixture(scope="session")
def rig64(head3):
    return default_rig(head3, image_size=(64, 64))


@pytest.fixture(scope="session")
def lm_ids3(head3, scheme):
    return landmark_vertex_ids(head3, scheme)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

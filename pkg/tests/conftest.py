import numpy as np
import pytest

from densepack.geometry import PinholeIntrinsics
from densepack.meshes import box_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_cube():
    return box_mesh((1.0, 1.0, 1.0))


@pytest.fixture
def cam():
    return PinholeIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

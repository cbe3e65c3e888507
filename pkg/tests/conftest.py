import numpy as np
import pytest

from barrierkit.barrier import BarrierOptions, assemble_boundary, barrier_arcs
from barrierkit.fixtures import get_fixture
from barrierkit.tangency import FaceSearchOptions, find_all_tangency_points


class Computed:
    """A fixture with its tangency points, raw arcs and assembled boundary."""

    def __init__(self, name):
        self.fx = get_fixture(name)
        self.S = (self.fx.system, self.fx.constraints, self.fx.control)
        self.points = find_all_tangency_points(*self.S, FaceSearchOptions.from_box(self.fx.search_box))
        self.arcs = barrier_arcs(*self.S, self.points, BarrierOptions(), threads=1)
        self.boundary = assemble_boundary(*self.S, self.arcs)


_CACHE = {}


def computed(name) -> Computed:
    if name not in _CACHE:
        _CACHE[name] = Computed(name)
    return _CACHE[name]


@pytest.fixture(scope="session")
def academic_run():
    return computed("academic")


@pytest.fixture(scope="session")
def linear_run():
    return computed("linear_spring")


@pytest.fixture(scope="session")
def nonlinear_run():
    return computed("nonlinear_spring")


@pytest.fixture(params=["academic", "linear_spring", "nonlinear_spring", "nonlinear_spring_soft",
                        "academic_disconnected"])
def any_run(request):
    return computed(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from recomb.game import PopulationState, TraitSpace, build_game
from recomb.scenario import load_scenario

PD_TABLE = [
    [15, 15, 15, 6],
    [10, 10, 10, 1],
    [10, 10, 10, 1],
    [16, 16, 16, 7],
]

HD_TABLE = [
    [50, 52, 56, 36, 32, 30],
    [48, 50, 54, 34, 30, 28],
    [44, 46, 50, 30, 26, 24],
    [64, 66, 70, 10, 6, 4],
    [68, 70, 74, 14, 10, 8],
    [70, 72, 76, 16, 12, 10],
]


@pytest.fixture(scope="session")
def pd():
    return build_game(TraitSpace((("s", "a"), ("c", "d"))), PD_TABLE, name="pd")


@pytest.fixture(scope="session")
def hd():
    return build_game(TraitSpace((("d", "h"), ("r", "v", "e"))), HD_TABLE, name="hd")


@pytest.fixture(scope="session")
def g3():
    """A random three-dimensional game with 2x3x2 types."""
    rng = np.random.default_rng(7)
    space = TraitSpace((("p", "q"), ("x", "y", "z"), ("m", "n")))
    return build_game(space, rng.uniform(1.0, 10.0, size=(space.size, space.size)), name="g3")


@pytest.fixture
def hd_half(hd):
    return PopulationState.mixture(hd.space, {"hv": 0.5, "dv": 0.5})


@pytest.fixture(scope="session")
def pd_scenario():
    return load_scenario("pd-contracts")


def random_state(space, rng):
    return PopulationState(space, rng.dirichlet(np.ones(space.size)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

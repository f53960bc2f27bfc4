import numpy as np
import pytest

from spinesim.model import Constant, Explicit, FiniteChain, BrownianMotion, ModelSpec, PerStateRate

ACCEPTANCE_LINES = []


@pytest.fixture
def two_type():
    return ModelSpec(FiniteChain(np.array([[-0.5, 0.5], [1.0, -1.0]])), PerStateRate((0.5, 2.0)),
                     Explicit((0.3, 0.0, 0.7)), name="two-type chain")


@pytest.fixture
def bbm():
    return ModelSpec(BrownianMotion(), Constant(1.0), Explicit((0.0, 0.0, 1.0)), name="binary BBM")


@pytest.fixture
def gw():
    """Single-type Galton-Watson in continuous time with p = (0.2, 0.3, 0.5)."""
    return ModelSpec(FiniteChain(np.zeros((1, 1))), Constant(1.0), Explicit((0.2, 0.3, 0.5)), name="gw")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))

from ubreach.backreach import GoalSet  # noqa: E402
from ubreach.system import (NeuralFeedbackLoop, NeuralNetwork, load_network,  # noqa: E402
                            make_dynamics)

UNICYCLE_LO = np.array([-3.0, 0.0])
UNICYCLE_HI = np.array([4.5, 8.0])


@pytest.fixture(scope="session")
def unicycle():
    net = load_network(FIXTURES / "unicycle" / "policy.json")
    return NeuralFeedbackLoop(make_dynamics("unicycle_heading", {"v": 1.0}), net,
                              UNICYCLE_LO, UNICYCLE_HI)


@pytest.fixture(scope="session")
def unicycle_goal():
    return GoalSet.box([4.0, 6.0], [6.0, 7.0])


@pytest.fixture(scope="session")
def halving():
    """x' = 0.5 u with the identity controller on [-10, 10]."""
    dyn = make_dynamics("affine", {"A": [[0.0]], "B": [[0.5]]})
    return NeuralFeedbackLoop(dyn, NeuralNetwork.identity(1), np.array([-10.0]), np.array([10.0]))


@pytest.fixture(scope="session")
def unit_goal():
    return GoalSet.box([-1.0], [1.0])


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])

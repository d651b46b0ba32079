import sys

import numpy as np
import pytest

from markovshift.chain import homogeneous_chain, perturbed_chain, random_doeblin_chain

Q2 = np.array([[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture
def two_state():
    return homogeneous_chain(Q2, 64, buffer=8)


@pytest.fixture
def mixing_chain():
    """Inhomogeneous two-state Doeblin chain used across the limit tests."""
    return perturbed_chain(Q2, 0.05, 4096, seed=6, buffer=8)


@pytest.fixture
def small_random():
    return random_doeblin_chain(3, 12, floor=0.3, seed=5)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])

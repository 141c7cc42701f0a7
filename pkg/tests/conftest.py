import pytest

from fractions import Fraction

from embedagents.core import Alphabet

BINARY_ACTIONS = Alphabet(("a0", "a1"), "action")
BINARY_PERCEPTS = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))


@pytest.fixture
def binary():
    return BINARY_ACTIONS, BINARY_PERCEPTS


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])

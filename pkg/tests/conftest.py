import numpy as np
import pytest
from hypothesis import settings

from seroprev.model import MainStudy, StratumTable, ValidationStudy

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@pytest.fixture
def screennc():
    """Low-prevalence screening inputs: 40/40, 274/277, 24 of 2973."""
    return ValidationStudy(40, 40, 277, 274), MainStudy.unstratified(24, 2973)


@pytest.fixture
def two_strata():
    table = StratumTable(("a", "b"), np.array([0.5, 0.5]))
    records = [(1, "a")] * 3 + [(0, "a")] * 97 + [(1, "b")] * 1 + [(0, "b")] * 99
    return table, MainStudy.from_records(records)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

import numpy as np
import pytest

from celltraffic import synth
from celltraffic.ingest import bin_intervals


@pytest.fixture(scope="session")
def profiles():
    return synth.load_profiles()


@pytest.fixture(scope="session")
def day_trace():
    """One simulated day of the standard mixed-app user."""
    return synth.standard_trace(days=1.0, seed=7)


@pytest.fixture(scope="session")
def day_intervals(day_trace):
    trace, _ = day_trace
    return bin_intervals(trace, 10.0, synth.SECONDS_PER_DAY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

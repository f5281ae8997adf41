import numpy as np
import pytest

from seqpost.models import ConjugateNormalModel
from seqpost.rng import Phase, RandomStream, StreamKey


def sim_stream(seed):
    return RandomStream(StreamKey(seed, phase=Phase.AUX))


@pytest.fixture
def conjugate():
    return ConjugateNormalModel(sigma2=1.0, m0=0.0, v0=1.0)


@pytest.fixture
def conjugate_data(conjugate):
    return conjugate.simulate(0.7, 100, sim_stream(2024))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)

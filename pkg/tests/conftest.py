import numpy as np
import pytest

from pupilnet import CnnConfig, init_model

TINY = CnnConfig(input_size=10, kernel_size=3, num_filters=2, pool_window=2,
                 pool_stride=2, num_perceptrons=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return init_model(TINY, seed=7)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)

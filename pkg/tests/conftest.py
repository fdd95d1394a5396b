import numpy as np
import pytest

from mixaug.numerics import Rng


@pytest.fixture
def rng():
    return Rng(20240607)


def random_simplex(gen, b, k):
    x = gen.uniform(0.05, 1.0, size=(b, k))
    return x / x.sum(axis=1, keepdims=True)


def random_one_hot(gen, b, k):
    return np.eye(k)[gen.integers(0, k, size=b)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

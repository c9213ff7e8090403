import numpy as np
import pytest

from susceptlab import make_monomial_gaussian


@pytest.fixture
def model_k1():
    return make_monomial_gaussian((1,))


@pytest.fixture
def model_k2():
    return make_monomial_gaussian((2,))


@pytest.fixture
def model_2d():
    return make_monomial_gaussian((1, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import settings

from pruw.field import PrimeField
from pruw.params import SystemParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture
def gf7():
    return PrimeField(7)


@pytest.fixture
def gf2053():
    return PrimeField(2053)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def example_params():
    """P=5, l=1 setting used by the five-subpacket walkthrough."""
    return SystemParams.build(N=6, M=2, P=5, q=2053, r="2/5", seed=11)

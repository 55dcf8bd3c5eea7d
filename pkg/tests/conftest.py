import numpy as np
import pytest

from d2dbayes.dynamics import simulate_background
from d2dbayes.network import CostSequence, build_nd_network


@pytest.fixture(scope="session")
def nd():
    return build_nd_network()


@pytest.fixture(scope="session")
def bg_costs(nd):
    return simulate_background(nd, 50, rng_seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_costs(rng, T, M, lo=5.0, hi=30.0, od_id="0"):
    return CostSequence(rng.uniform(lo, hi, size=(T, M)), od_id)


# acceptance lines collected by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])

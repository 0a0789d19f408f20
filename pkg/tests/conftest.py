import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ildm.demos import collect_demos
from ildm.instances import example_d5, random_layered_mdp

settings.register_profile("ildm", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ildm")


@pytest.fixture
def d5():
    return example_d5()


def small_case(seed, sizes=(3, 2, 3), A=2, N=3, expert_kind="random"):
    rng = np.random.default_rng(seed)
    mdp, expert = random_layered_mdp(sizes, A, rng, expert_kind=expert_kind)
    return mdp, expert, collect_demos(mdp, expert, N, rng)


@pytest.fixture
def small():
    return small_case(7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

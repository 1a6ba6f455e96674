import numpy as np
import pytest

from nbody_plan.core import ParallelPlan, Timeline


def make_plan(rows, T=100, n_agents=2):
    """Plan from ``(source_start, source_end, agent, plan_start)`` rows."""
    return ParallelPlan.from_tuples(Timeline(T), n_agents, rows)


@pytest.fixture
def fix_a():
    return make_plan([(0, 50, 1, 0), (50, 100, 2, 0)])


@pytest.fixture
def fix_b():
    return make_plan([(0, 100, 1, 0)], n_agents=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


# acceptance criteria append (number, title, passed, detail) here
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}")

import sys

import pytest

from fairagg.aggregation import solve_independent
from fairagg.instance import paper_toy_instance
from fairagg.milp import SolverOptions


@pytest.fixture(scope="session")
def toy():
    return paper_toy_instance()


@pytest.fixture(scope="session")
def toy_baseline(toy):
    return solve_independent(toy, SolverOptions(backend="embedded"))


@pytest.fixture
def embedded():
    return SolverOptions(backend="embedded")


@pytest.fixture
def highs():
    return SolverOptions(backend="highs")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(module.RESULTS.items()):
            terminalreporter.write_line(line)

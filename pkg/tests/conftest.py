from pathlib import Path

import pytest

from clickpersist import dgp
from clickpersist.pipeline import prepare
from clickpersist.similarity import published_codes

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def codes():
    return published_codes()


@pytest.fixture(scope="session")
def small_sim():
    return dgp.simulate(dgp.DgpConfig(n_employees=600, seed=11))


@pytest.fixture(scope="session")
def small_prepared(small_sim):
    return prepare(small_sim.panel)


@pytest.fixture(scope="session")
def desk_prepared():
    return prepare(dgp.simulate_panel(dgp.DgpConfig(seed=5)))


# one pass/fail line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

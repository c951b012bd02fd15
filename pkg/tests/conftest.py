import pytest
from hypothesis import settings

from chemostat.model import load_model

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def case1():
    return load_model("table1_case1.json")


@pytest.fixture(scope="session")
def case2():
    return load_model("table1_case2.json")


@pytest.fixture(scope="session", params=["table1_case1.json", "table1_case2.json"], ids=["theta", "circulant"])
def either_case(request):
    return load_model(request.param)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

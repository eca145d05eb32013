import pytest

from ionclock.crystal import fit_trap_params

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def reference_fit():
    return fit_trap_params()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

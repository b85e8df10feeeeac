import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    def record(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

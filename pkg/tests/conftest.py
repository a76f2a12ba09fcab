import numpy as np
import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")

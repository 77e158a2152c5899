import numpy as np
import pytest

# (criterion number, title, passed, detail) rows filled in by test_acceptance
ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num:2d} {title}: {detail}")

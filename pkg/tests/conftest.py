import re

import pytest

N_CRITERIA = 13


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def record(request):
    """Store the outcome of one acceptance criterion for the terminal summary."""
    store = request.config._acceptance

    def _record(number, passed, detail=""):
        store[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return _record


_ERRORS = set()


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", report.nodeid)
    if m and report.failed:
        _ERRORS.add(int(m.group(1)))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config._acceptance
    if not store and not _ERRORS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in store:
            ok, detail = store[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif n in _ERRORS:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (raised before reporting)")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")

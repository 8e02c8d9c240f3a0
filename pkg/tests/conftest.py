import re

import pytest

_criteria = {}
_NAME = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome and print its line."""
    def record(number, passed, detail=""):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria[number] = (bool(passed), detail)
        print(line)
        return passed
    return record


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if m and report.when == "call" and report.failed:
        n = int(m.group(1))
        ok, detail = _criteria.get(n, (False, "test raised before recording"))
        _criteria[n] = (False, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

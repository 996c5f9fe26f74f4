"""Collects acceptance-criterion outcomes and prints one verdict line per criterion."""

import pytest

_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    passed, _ = _verdicts.get(number, (True, title))
    _verdicts[number] = (passed and report.passed, title)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        passed, title = _verdicts[number]
        terminalreporter.write_line(f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'}")

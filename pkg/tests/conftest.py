from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent

_results: dict = {}


@pytest.fixture
def repo_root():
    return ROOT


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        num, title = marker
        prev = _results.get(num, (title, "PASS"))[1]
        _results[num] = (title, "FAIL" if report.outcome != "passed" or prev == "FAIL" else "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and mark.args:
        outcome.get_result().acceptance = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        title, status = _results[num]
        terminalreporter.write_line(f"{status} criterion {num}: {title}")

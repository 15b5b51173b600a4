"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    # a failing fixture counts against the criterion just like a failing assertion
    if report.when == "call" or report.outcome != "passed":
        number, title = marker.args
        entry = _criteria.setdefault(number, {"title": title, "outcomes": []})
        entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if all(o == "passed" for o in entry["outcomes"]) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {entry['title']}")

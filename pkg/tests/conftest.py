"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import pytest

_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        status = "PASS" if rep.passed else "FAIL"
        detail = dict(item.user_properties).get("detail", "")
        _LINES.append((number, f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)

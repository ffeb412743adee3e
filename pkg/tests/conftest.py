"""Shared pytest wiring: the acceptance verdict registry.

Criterion tests record a one-line verdict through the ``acceptance``
fixture; the terminal summary prints the collected lines in one block so
a plain pytest run always shows the pass/fail state of every guarantee.
"""

import re

import pytest

_LINES: dict[int, str] = {}
_CRITERION = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def acceptance():
    def record(number: int, line: str):
        _LINES[number] = line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    failed = set()
    for key in ("failed", "error"):
        for report in terminalreporter.stats.get(key, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                failed.add(int(match.group(1)))
    numbers = sorted(set(_LINES) | failed)
    if not numbers:
        return
    terminalreporter.section("acceptance criteria")
    for number in numbers:
        if number in failed:
            terminalreporter.write_line(
                f"criterion {number} FAIL: see test report above")
        else:
            terminalreporter.write_line(_LINES[number])

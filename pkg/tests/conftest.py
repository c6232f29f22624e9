import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_criteria = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""
    def _report(name, ok, detail=""):
        _criteria.append((name, ok, detail))
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

"""Shared fixtures; collects the acceptance criterion verdicts for the terminal summary."""

import pytest

_VERDICTS = {}


@pytest.fixture(scope="session")
def verdict():
    """``verdict(n, passed, detail)`` records criterion ``n`` and echoes it."""

    def record(n, passed, detail=""):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _VERDICTS[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])

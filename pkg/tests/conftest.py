"""Collects acceptance verdicts and prints them after the test run."""

import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture(scope="session")
def verdict(request):
    """``verdict(criterion, passed, detail)`` records one acceptance line."""
    lines = request.config.stash[_VERDICTS]

    def record(criterion: int, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((criterion, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)

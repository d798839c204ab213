"""Collects acceptance verdicts and prints them after the run."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(n, ok, detail)``; the line is printed now and in the summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number: int, ok: bool, detail: str) -> None:
        VERDICTS[number] = (bool(ok), detail)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(_line(number))

    return record


def _line(number: int) -> str:
    ok, detail = VERDICTS[number]
    return f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(_line(number))

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(line: str, ok: bool) -> None:
        text = f"{'PASS' if ok else 'FAIL'} {line}"
        ACCEPTANCE_LINES.append(text)
        print(text)
        assert ok, text

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

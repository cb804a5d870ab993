import pytest

# (criterion, passed, detail) lines recorded by the acceptance suite
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion, print it, then assert it."""

    def record(name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        assert passed, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

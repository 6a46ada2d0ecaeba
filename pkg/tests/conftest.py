import pytest

_LINES: list[str] = []


@pytest.fixture
def verdict(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call ``verdict(label, ok, detail)``; the line is printed immediately and
    repeated in the terminal summary so it survives output capture.
    """
    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)

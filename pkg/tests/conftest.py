import pytest

_VERDICTS = []


@pytest.fixture
def criterion():
    """``check(label, ok, detail)`` records a PASS/FAIL line, then asserts ``ok``."""

    def check(label, ok, detail=""):
        _VERDICTS.append((label, bool(ok), detail))
        assert ok, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())

import pytest

_ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(k, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])

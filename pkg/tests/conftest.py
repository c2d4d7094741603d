import pytest

_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record ``(name, ok, detail)`` for the end-of-run acceptance summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        _CRITERIA[name] = (bool(ok), detail)
        print(f"{name}: {'PASS' if ok else 'FAIL'} | {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} | {detail}")

import pytest

_ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line: (criterion id, passed, detail)."""

    def _record(cid, passed, detail=""):
        _ACCEPTANCE.append((cid, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{cid:<5} {'PASS' if ok else 'FAIL'}  {detail}")

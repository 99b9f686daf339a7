import pytest

_RESULTS = {}


@pytest.fixture
def accept():
    """Record one acceptance verdict: ``accept(n, title, passed, detail)``."""

    def record(n, title, passed, detail=""):
        _RESULTS[n] = (title, bool(passed), detail)
        line = f"[acceptance {n:2d}] {'PASS' if passed else 'FAIL'}  {title}  {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, passed, detail = _RESULTS[n]
        terminalreporter.write_line(f"{n:2d}. {'PASS' if passed else 'FAIL'}  {title}  {detail}")

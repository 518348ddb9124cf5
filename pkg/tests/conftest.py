import pytest

RESULTS = []


@pytest.fixture
def record():
    """Record one acceptance line: ``record(label, ok, detail)``."""
    def _record(label, ok, detail=""):
        status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{status} {label}: {detail}"
        RESULTS.append(line)
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

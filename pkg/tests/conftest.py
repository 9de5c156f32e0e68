import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion_report():
    """record(n, passed, detail): one line per acceptance criterion."""
    def record(n, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}"
        _CRITERIA[str(n)] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])

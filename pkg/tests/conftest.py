import pytest

_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _LINES.append((_order(number), line))
        print(line, flush=True)
        return passed

    return record


def _order(number):
    text = str(number)
    digits = "".join(c for c in text if c.isdigit())
    return int(digits), text


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)

import pytest

_REPORT = []


@pytest.fixture(scope="session")
def criterion_report():
    """Call ``report(number, passed, detail)`` to add a line to the end-of-run criteria summary."""

    def report(number, passed, detail=""):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _REPORT.append((number, line))
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_REPORT):
        terminalreporter.write_line(line)

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; call as ``criterion(k, title, ok, detail)``."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} -- {detail}"

    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])

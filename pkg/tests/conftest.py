import pytest

_RESULTS = {}


@pytest.fixture
def criterion(request):
    """record(number, title, ok, detail) stores one acceptance line."""
    def record(num, title, ok, detail=""):
        _RESULTS[num] = (title, bool(ok), detail)
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {title} ({detail})"
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        title, ok, detail = _RESULTS[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {num}: {title} ({detail})")

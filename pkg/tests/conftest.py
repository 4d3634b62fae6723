import contextlib

import pytest

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """Context manager recording PASS/FAIL for one numbered acceptance criterion."""
    @contextlib.contextmanager
    def run(number: int, title: str):
        try:
            yield
        except BaseException:
            _CRITERIA[number] = ("FAIL", title)
            print(f"FAIL criterion {number}: {title}")
            raise
        _CRITERIA[number] = ("PASS", title)
        print(f"PASS criterion {number}: {title}")
    return run


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title = _CRITERIA[n]
        terminalreporter.write_line(f"{status} criterion {n}: {title}")

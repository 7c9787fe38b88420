import pytest

_CRITERIA: dict[int, str] = {}


class Criterion:
    """Records one acceptance verdict and fails the test if it did not pass."""

    def __call__(self, number: int, title: str, ok: bool, detail: str, seconds: float | None = None):
        timing = "" if seconds is None else f" [{seconds:.1f}s]"
        _CRITERIA[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}: {detail}{timing}"
        print(_CRITERIA[number])
        assert ok, _CRITERIA[number]


@pytest.fixture
def criterion():
    return Criterion()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])

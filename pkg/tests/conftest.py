"""Collects one verdict line per acceptance criterion and prints them at the end."""
import pytest

VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    def record(criterion: str, ok: bool, detail: str = "") -> None:
        VERDICTS[criterion] = f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(VERDICTS[criterion])

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS, key=lambda k: int(k[1:])):
        terminalreporter.write_line(VERDICTS[key])

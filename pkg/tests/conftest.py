import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}

TITLES = {
    1: "operator-table exactness",
    2: "key length and efficiency",
    3: "key-rate threshold",
    4: "key-rate curve oracle",
    5: "collective-attack dichotomy",
    6: "fake-photon detection",
    7: "determinism",
}


@pytest.fixture
def acceptance():
    """Record the verdict for one acceptance criterion; returns the verdict."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _RESULTS[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        if n not in _RESULTS:
            terminalreporter.write_line(f"criterion {n} ({TITLES[n]}): NOT RUN")
            continue
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n} ({TITLES[n]}): {'PASS' if ok else 'FAIL'} {detail}")

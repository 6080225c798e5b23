"""Shared pytest wiring: acceptance-criterion result lines."""

import pytest

_RESULTS: list = []


class _Recorder:
    def __call__(self, number, name, passed, detail=""):
        _RESULTS.append((number, name, bool(passed), detail))
        return bool(passed)

    def skip(self, number, name, reason):
        _RESULTS.append((number, name, None, reason))


@pytest.fixture(scope="session")
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_RESULTS, key=lambda r: tuple(int(p) for p in str(r[0]).split("."))):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"criterion {number:<5} {status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)

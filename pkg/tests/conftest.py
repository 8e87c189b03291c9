"""Collects acceptance verdicts and prints one PASS/FAIL line per criterion at the end of the run."""
from collections import OrderedDict

import pytest

_VERDICTS: "OrderedDict[str, list[tuple[bool, str]]]" = OrderedDict()


class Recorder:
    def __call__(self, criterion: str, passed: bool, detail: str) -> bool:
        _VERDICTS.setdefault(criterion, []).append((bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
        return bool(passed)


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, parts in _VERDICTS.items():
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}: {detail}")

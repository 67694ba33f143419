"""Collects acceptance outcomes and prints one verdict line per criterion."""
import re
from collections import OrderedDict

_CRITERIA = OrderedDict()
_PATTERN = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome in ("failed", "skipped"):
        n = int(m.group(1))
        ok = report.outcome == "passed"
        _CRITERIA[n] = _CRITERIA.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _CRITERIA[n] else 'FAIL'}")

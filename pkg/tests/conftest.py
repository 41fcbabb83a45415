"""Acceptance summary: one PASS/FAIL line per criterion after the run."""
import re
from collections import defaultdict

_CRITERION = re.compile(r"test_c(\d\d)_")
_results = defaultdict(list)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [v for k, v in report.user_properties if k == "detail"]
        _results[int(m.group(1))].append((report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        rows = _results[n]
        ok = all(passed for passed, _ in rows)
        detail = "; ".join(d for _, ds in rows for d in ds)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

"""Collects acceptance-test outcomes and prints one line per criterion at the end of the run."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "skipped" if report.skipped else report.outcome
        _outcomes.setdefault(int(m.group(1)), []).append((m.group(2), outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        states = {o for _, o in results}
        if "failed" in states:
            verdict = "FAIL"
        elif states == {"skipped"}:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        names = ", ".join(sorted({n for n, _ in results}))
        checks = f"{len(results)} check" + ("s" if len(results) != 1 else "")
        terminalreporter.write_line(f"criterion {number}: {verdict} ({checks}: {names})")

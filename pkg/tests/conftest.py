import re

import pytest


@pytest.fixture
def criterion(record_property):
    """Record the measured detail of an acceptance criterion, then assert it."""

    def check(ok: bool, detail: str):
        record_property("detail", detail)
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome != "error"):
                continue
            detail = dict(rep.user_properties).get("detail", "")
            if not detail and rep.longrepr is not None:
                detail = str(rep.longrepr).strip().splitlines()[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            rows[int(m.group(1))] = f"{status}  criterion {m.group(1)} ({m.group(2).replace('_', ' ')}): {detail}"
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(rows):
            terminalreporter.write_line(rows[n])

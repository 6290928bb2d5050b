import numpy as np
import pytest

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    ac = dict(report.user_properties).get("acceptance")
    if ac is None and "test_acceptance.py" in report.nodeid:
        ac = report.nodeid.split("::")[-1]
    if ac is not None:
        ACCEPTANCE[ac] = (report.outcome, dict(report.user_properties).get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        outcome, detail = ACCEPTANCE[name]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)

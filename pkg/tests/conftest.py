"""Shared pytest config: after an acceptance run, print one verdict line
per criterion so the gate is readable at a glance."""

ACCEPTANCE_MODULE = "test_acceptance.py"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = []
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call":
                continue
            if ACCEPTANCE_MODULE + "::" not in report.nodeid:
                continue
            name = report.nodeid.split("::", 1)[1]
            verdicts.append((name, label))
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in sorted(verdicts):
        terminalreporter.write_line(f"{label}  {name}")

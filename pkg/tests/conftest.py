def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, from the ``criterion`` property each test records."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(report, "user_properties", []))
            if "criterion" not in props or report.when not in ("call", "setup"):
                continue
            if report.when == "setup" and outcome == "passed":
                continue
            status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            lines.append((props["criterion"], status, props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(lines, key=lambda l: int(l[0].split()[0])):
        terminalreporter.write_line(f"{status}  {criterion}" + (f"  ({detail})" if detail else ""))

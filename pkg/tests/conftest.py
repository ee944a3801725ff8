"""Shared pytest hooks: acceptance tests tag themselves with a criterion id
and the terminal summary prints one PASS/FAIL line per tag."""


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((props["criterion"], f"criterion {props['criterion']}: {status}  {props.get('detail', '')}".rstrip()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)

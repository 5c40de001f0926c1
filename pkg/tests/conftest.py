"""Collects acceptance verdicts and prints them at the end of the session."""

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"acceptance criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")

"""Shared pytest wiring.

Acceptance tests register one verdict line each; echoing them in the
terminal summary keeps them visible even under captured output.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)

"""Shared pytest plumbing: the acceptance scorecard.

Scorecard lines are printed inside the tests too, but pytest captures stdout
of passing tests, so the acceptance module also records each line here and a
terminal-summary hook replays them where they are always visible.
"""

ACCEPTANCE_LINES = []


def record_scorecard(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance scorecard")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

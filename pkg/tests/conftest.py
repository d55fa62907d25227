"""Shared pytest plumbing: surface the acceptance checklist lines.

The acceptance tests each print one ``[PASS]/[FAIL] criterion N: ...``
line; pytest captures stdout of passing tests, so this hook replays the
collected lines in the terminal summary where they are visible under a
plain ``pytest -v`` run.
"""

CRITERION_LINES = []


def record_criterion_line(line):
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)

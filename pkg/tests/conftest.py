"""Shared pytest plumbing.

The acceptance tests register one verdict per criterion here; the hook prints
them as a block at the end of the run so the gate's outcome is readable
without scrolling through the per-test log.
"""

ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{status}  {name}: {detail}")

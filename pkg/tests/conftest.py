"""Emit the acceptance-criterion verdict lines in the terminal summary.

Pytest captures test stdout at the file-descriptor level, so the per
criterion PASS/FAIL lines printed inside acceptance tests would otherwise
be visible only on failures or under ``-s``.  The acceptance module
collects every verdict line; this hook replays them at the end of the run
through the terminal reporter, which also lands them in any piped log.
"""

import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "CRITERION_LINES", None) if module else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

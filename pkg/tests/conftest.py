import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# acceptance criteria record "ACn PASS|FAIL|SKIP ..." lines here; printed again at the end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, PASS/FAIL, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")

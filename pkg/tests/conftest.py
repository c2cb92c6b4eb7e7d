import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_record import RESULTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])

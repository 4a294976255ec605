import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from acceptance_report import RESULTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key:<5} {'PASS' if ok else 'FAIL'}  {detail}")

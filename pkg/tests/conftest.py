import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from _acceptance_log import RESULTS  # noqa: E402


def _key(name: str):
    num = "".join(ch for ch in name if ch.isdigit())
    return (int(num) if num else 0, name)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(RESULTS, key=_key):
        ok, detail = RESULTS[name]
        tr.write_line(f"criterion {name:>3}: {'PASS' if ok else 'FAIL'}  {detail}")

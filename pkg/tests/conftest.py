import os
import sys

import pytest

ACCEPTANCE = {}


def record(number, title, passed, detail):
    """Store one acceptance outcome and print its line immediately."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    sys.stdout.write("\n" + line + "\n")
    return passed


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("HNS_THREADS", raising=False)
    return tmp_path


os.environ.setdefault("PYTHONHASHSEED", "0")

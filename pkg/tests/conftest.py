import time

import numpy as np
import pytest

from resiltrack.dynamics import CwParams, default_layout, split_layout
from resiltrack.reference import Mission

ACCEPTANCE = {}
_START = [time.perf_counter()]


def record(criterion, passed, detail=""):
    """Store a criterion verdict; several parts of one criterion are ANDed."""
    ok, parts = ACCEPTANCE.get(criterion, (True, []))
    ACCEPTANCE[criterion] = (ok and bool(passed), parts + [detail] if detail else parts)


def pytest_sessionstart(session):
    _START[0] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    if 10 in ACCEPTANCE:
        elapsed = time.perf_counter() - _START[0]
        record(10, elapsed < 600.0, f"session runtime {elapsed:.0f}s (limit 600s)")
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, parts = ACCEPTANCE[c]
        tr.write_line(f"criterion {c:>2}: {'PASS' if ok else 'FAIL'}  " + "; ".join(parts))


@pytest.fixture(scope="session")
def params():
    return CwParams()


@pytest.fixture(scope="session")
def layout4():
    return split_layout(default_layout(), 4)


@pytest.fixture(scope="session")
def short_mission():
    # one short leg: fast references for CLI and sweep tests
    return Mission(waypoints=((0.0, 80.0), (0.0, 120.0)), transfer_time=5400.0, initial_hold=100.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

# criterion number -> (title, passed, runtime seconds, limit seconds, detail)
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, float, float, str]] = {}


class CriterionCheck:
    """Collects the sub-checks of one acceptance criterion and its runtime."""

    def __init__(self, number: int, title: str, limit: float):
        self.number = number
        self.title = title
        self.limit = limit
        self.failures: list[str] = []

    def check(self, ok: bool, what: str):
        if not ok:
            self.failures.append(what)


@contextmanager
def _criterion(number: int, title: str, limit: float):
    chk = CriterionCheck(number, title, limit)
    start = time.perf_counter()
    error = None
    try:
        yield chk
    except Exception as exc:  # recorded, then re-raised so pytest reports it too
        error = exc
        raise
    finally:
        elapsed = time.perf_counter() - start
        problems = list(chk.failures)
        if error is not None:
            problems.append(f"{type(error).__name__}: {error}")
        if elapsed > limit:
            problems.append(f"runtime {elapsed:.2f} s exceeds {limit:g} s")
        ACCEPTANCE_RESULTS[number] = (title, not problems, elapsed, limit, "; ".join(problems))
    over = elapsed > limit
    assert not chk.failures and not over, "; ".join(
        chk.failures + ([f"runtime {elapsed:.2f} s exceeds {limit:g} s"] if over else []))


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, elapsed, limit, detail = ACCEPTANCE_RESULTS[number]
        line = (f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  "
                f"({elapsed:.2f} s, limit {limit:g} s)")
        if detail:
            line += f"  -- {detail}"
        terminalreporter.write_line(line)

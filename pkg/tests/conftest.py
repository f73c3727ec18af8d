import time
from contextlib import contextmanager

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Time an acceptance criterion and log one PASS/FAIL line for it."""
    lines = request.config.stash.setdefault(_LINES, [])

    @contextmanager
    def run(number: int, title: str, budget: float | None = None):
        info = {"detail": ""}
        ok = False
        t0 = time.perf_counter()
        try:
            yield info
            elapsed = time.perf_counter() - t0
            assert budget is None or elapsed < budget, f"runtime {elapsed:.2f} s exceeds {budget} s"
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            detail = f" [{info['detail']}]" if info["detail"] else ""
            line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title} ({elapsed:.2f} s){detail}"
            lines.append((number, line))
            print(line)

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

import pytest

from .acceptance_log import RESULTS


@pytest.fixture
def criterion():
    """Record one acceptance verdict: ``criterion(k, ok, detail)``, then assert it."""
    def record(k, ok, detail):
        RESULTS[k] = (bool(ok), detail)
        print(f"acceptance criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {k}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")

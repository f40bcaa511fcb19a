import numpy as np
import pytest

from dkdssd import tensor as T

CRITERIA: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    """Register the outcome of one acceptance criterion (worst outcome wins)."""
    prev = CRITERIA.get(criterion)
    if prev is not None and not prev[0]:
        return
    CRITERIA[criterion] = (bool(passed), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _float64():
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(np.float64)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")

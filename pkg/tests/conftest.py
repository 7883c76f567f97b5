import numpy as np
import pytest

from pmwcm.losses import LossFamily
from pmwcm.universe import Histogram, grid_line


@pytest.fixture
def line2():
    """Universe {0, 1} on the real line."""
    return grid_line(2)


@pytest.fixture
def sq(line2):
    """Squared loss (theta - x)^2 on [0, 1] over the universe {0, 1}."""
    return LossFamily("mean").member(line2, 0, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def hist(*mass):
    return Histogram(np.array(mass, dtype=float))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(label: str, ok: bool, detail: str) -> bool:
        lines.append((label, f"{'PASS' if ok else 'FAIL'} {label}: {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

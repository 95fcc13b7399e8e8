import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("kg", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "kg"))


@pytest.fixture
def grid1():
    from kgscatter.grid import make_grid
    return make_grid(1, 40.0, 256)


@pytest.fixture
def gaussian1(grid1):
    from kgscatter.grid import FieldState
    x = grid1.coords[0]
    return FieldState.from_arrays(grid1, np.exp(-x ** 2), 0.3 * x * np.exp(-x ** 2 / 2))


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion(capsys):
    """Record and echo one acceptance line: ``criterion(3, ok, "detail")``."""
    def record(number, ok, detail=""):
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from jsqps.core import SojournCdf, make_time_grid

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_grid():
    return make_time_grid()


def step_cdf(grid, at: float, source: str = "step") -> SojournCdf:
    """Unit step at ``at``: P(T <= t) = 1 for t >= at."""
    return SojournCdf(grid, (grid.points >= at - 1e-12).astype(float), source)


def exp_cdf(grid, rate: float, source: str = "exp") -> SojournCdf:
    return SojournCdf(grid, 1.0 - np.exp(-rate * grid.points), source)

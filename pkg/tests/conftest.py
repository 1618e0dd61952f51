import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from impulsegame import Grid, canonical_grid, canonical_impulse_grid, solve, tp1  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tp1_solution():
    spec = tp1()
    return solve(spec, canonical_grid(), canonical_impulse_grid(spec))


@pytest.fixture(scope="session")
def tp1_wide_solution():
    """TP1 on [-8, 8] with the canonical spacing: keeps rollouts away from the box edge."""
    spec = tp1()
    return solve(spec, Grid(-8.0, 8.0, 321, 80), canonical_impulse_grid(spec))

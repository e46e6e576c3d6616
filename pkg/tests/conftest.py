import numpy as np
import pytest

from mnx import rng
from mnx.model import preset
from mnx.paths import build_grid, sample_brownian


@pytest.fixture
def sin_paths():
    """Twenty Wiener paths for a(x) = 2 + sin x on a 16 x 8 grid."""
    spec = preset("wiener-sin")
    grid = build_grid(16, 8)
    bp = sample_brownian(grid, rng.streams(11, range(20)))
    return spec, grid, bp


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    lines = acceptance_log.LINES
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

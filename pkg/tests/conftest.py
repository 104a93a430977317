import sys

import numpy as np
import pytest

from metapop import ObservationPanel, SeairModel, TimeGrid
from metapop.seair import PRESETS


@pytest.fixture
def m4():
    return PRESETS["constrained"]


@pytest.fixture
def small_panel():
    """Three units, twelve days, including a missing value and a zero run."""
    counts = np.array([
        [0, 1, 3, 2, 5, 8, 7, 12, 15, 11, 20, 18],
        [0, 0, 0, 1, 0, 2, 1, 3, np.nan, 4, 6, 5],
        [2, 2, 3, 1, 2, 2, 4, 3, 2, 5, 3, 4],
    ], dtype=float)
    return ObservationPanel(counts, TimeGrid.daily(12), ("a", "b", "c"))


@pytest.fixture
def two_city_model():
    return SeairModel([100_000, 50_000], np.zeros((1, 2, 2)), unit_names=("x", "y"))


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[n])

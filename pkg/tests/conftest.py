import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from acceptance_log import LINES  # noqa: E402
from oracles import EXAMPLE_CLICKS, EXAMPLE_NC, EXAMPLE_SLATES  # noqa: E402
from slatebayes import Dataset  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--heavy", action="store_true", default=False,
                     help="also run the K=4 slate sweep (long)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--heavy"):
        return
    skip = pytest.mark.skip(reason="needs --heavy")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def example():
    return Dataset(3, 2, EXAMPLE_SLATES, EXAMPLE_NC, EXAMPLE_CLICKS)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)

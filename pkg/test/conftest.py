"""
Shared fixtures; puts lib/ on the import path like bin/wavediff.py does.
"""

import os
import sys

import numpy as np
import pytest

MYDIR = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))
sys.path.append("%s/lib/" % MYDIR)

# pylint: disable=wrong-import-position
from globals import RUN_SLOW


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long reference run, needs WAVEDIFF_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set WAVEDIFF_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

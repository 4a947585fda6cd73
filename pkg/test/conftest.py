import os
import sys

import pytest

TEST_DIR = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.dirname(TEST_DIR))
sys.path.insert(0, TEST_DIR)

from generate_test_fields import BandLimitedFieldGenerator  # noqa: E402
from modules.fractional_kernel import build_kernel_spec  # noqa: E402
from modules.torus_fields import TorusGrid  # noqa: E402


@pytest.fixture
def grid1():
    return TorusGrid(1, 128)


@pytest.fixture
def grid2():
    return TorusGrid(2, 32)


@pytest.fixture(scope="session")
def spec1():
    """α = 1 on a 1D grid of 128 points"""
    return build_kernel_spec(1.0, TorusGrid(1, 128))


@pytest.fixture(scope="session")
def spec2():
    """α = 1.5 on a 2D grid of 32 points"""
    return build_kernel_spec(1.5, TorusGrid(2, 32))


@pytest.fixture
def generator():
    return BandLimitedFieldGenerator(seed=7)

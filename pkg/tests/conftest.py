import numpy as np
import pytest

from zrpflow.walk import UnderlyingWalk, stationary_measure
from zrpflow.zrp import ZrpModel, config_space


@pytest.fixture(scope="session")
def walk_a():
    """Symmetric two-site walk, unit rates."""
    return UnderlyingWalk.from_rates([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture(scope="session")
def walk_b():
    """Directed three-cycle 1 -> 2 -> 3 -> 1, unit rates."""
    return UnderlyingWalk.from_rates(
        [[0, 1, 0], [0, 0, 1], [1, 0, 0]], states=(1, 2, 3))


@pytest.fixture(scope="session")
def walk_d():
    """Non-reversible three-site walk with two maximal-mass sites.

    m = (0.4, 0.4, 0.2); the cycle products 1->2->3->1 and 1->3->2->1
    differ (16 vs 2), so the walk is genuinely non-reversible while the
    third site stays sub-maximal.
    """
    return UnderlyingWalk.from_rates(
        [[0, 2, 1], [1, 0, 2], [4, 2, 0]], states=(1, 2, 3))


@pytest.fixture(scope="session")
def model_a(walk_a):
    return ZrpModel.build(walk_a, alpha=3.0)


@pytest.fixture(scope="session")
def model_b(walk_b):
    return ZrpModel.build(walk_b, alpha=3.0)


@pytest.fixture(scope="session")
def model_d(walk_d):
    return ZrpModel.build(walk_d, alpha=3.0)


@pytest.fixture(scope="session")
def space_c():
    """Two particles on two sites: the smallest interesting space."""
    return config_space(2, 2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)

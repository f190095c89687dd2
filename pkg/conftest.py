import hypothesis
import numpy as np
import pytest

from lfis.model import PairwiseModel, build_ising_dense

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile("fast")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def two_spin():
    """M = 2, J_12 = 1, scale 1/sqrt(2)."""
    return PairwiseModel(2, [[0, 1, 1.0]], coupling_scale=1 / np.sqrt(2))


@pytest.fixture
def free_spins():
    """Five binary variables with no couplings."""
    return PairwiseModel(5, np.empty((0, 3)))


@pytest.fixture
def dense8():
    return build_ising_dense(8, seed=3)


@pytest.fixture
def potts3():
    """Three-valued chain with a non-product pair table."""
    table = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    return PairwiseModel(4, [[0, 1, 0.8], [1, 2, -0.5], [2, 3, 1.2], [0, 3, 0.3]],
                         domain=(0, 1, 2), pair_table=table)

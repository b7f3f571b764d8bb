import numpy as np
import pytest

from graphon_forge.graphon_model import StepGraphon


@pytest.fixture
def assortative_2block():
    """Two equal blocks, kernel [[7,1],[1,7]]: eigenvalues (4, 3), q = 4."""
    return StepGraphon(np.array([0.5, 0.5]), np.array([[7.0, 1.0], [1.0, 7.0]]))


@pytest.fixture
def weak_2block():
    """Two equal blocks, kernel [[6,2],[2,6]]: eigenvalues (4, 2), at the bulk boundary."""
    return StepGraphon(np.array([0.5, 0.5]), np.array([[6.0, 2.0], [2.0, 6.0]]))


def random_simple_graph(rng, n, p):
    """Edge list of G(n, p), as a (m, 2) array with u < v."""
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return np.stack([iu[keep], ju[keep]], axis=1)

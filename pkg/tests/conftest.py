import numpy as np
import pytest

from levybellman.lattice import Grid


@pytest.fixture
def line_grid():
    return Grid.box([(-1.0, 1.0)], 0.1)


def cos_sum(X):
    return np.cos(np.atleast_2d(X).sum(axis=1))

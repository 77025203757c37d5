import numpy as np
import pytest

from stepmerge.rng import Rng
from stepmerge.tensor import ORACLE, Tensor


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=ORACLE), requires_grad=requires_grad, dtype=ORACLE)


@pytest.fixture
def rng():
    return Rng(1234)

from itertools import permutations

import numpy as np
import pytest

from cfmlab.net.field import init_model
from cfmlab.shared.rng import SEED_ENV, make_rng


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


@pytest.fixture
def tiny_model():
    return init_model(2, (8, 8), seed=0)


@pytest.fixture
def brute_force_w2():
    """Minimum mean squared matching cost by enumerating permutations."""

    def w2(a, b):
        best = np.inf
        for perm in permutations(range(len(b))):
            best = min(best, float(np.mean(np.sum((a - b[list(perm)]) ** 2, axis=1))))
        return best

    return w2

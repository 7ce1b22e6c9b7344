import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", max_examples=25, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cascade_oracle(h, resolution, iterations=80):
    """Scaling function on the nodes ``i / 2**resolution`` by plain cascade iteration.

    Starts from the indicator of ``[0, 1)`` and applies
    ``v(x) <- sqrt(2) sum_k h_k v(2x - k)`` on the fixed dyadic grid.
    """
    S = len(h) - 1
    n = S * 2**resolution + 1
    nodes = np.arange(n)
    v = np.where(nodes < 2**resolution, 1.0, 0.0)
    for _ in range(iterations):
        new = np.zeros(n)
        for k, hk in enumerate(h):
            idx = 2 * nodes - k * 2**resolution
            ok = (idx >= 0) & (idx < n)
            new[ok] += np.sqrt(2.0) * hk * v[idx[ok]]
        v = new
    return v

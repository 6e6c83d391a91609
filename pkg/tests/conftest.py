import numpy as np
import pytest

import concave_match as cm

GOLDEN_DIR = "tests/golden"


def random_scaled_instance(seed, m=None, n=None, zero_frac=0.0):
    """Uniform random bids, optionally sparsified, scaled to max one."""
    rng = np.random.default_rng(seed)
    m = m if m is not None else int(rng.integers(1, 4))
    n = n if n is not None else int(rng.integers(1, 5))
    bids = rng.random((m, n))
    if zero_frac > 0.0:
        bids = bids * (rng.random((m, n)) >= zero_frac)
    if not bids.any():
        bids[0, 0] = 0.5
    return cm.scale_instance(bids)


@pytest.fixture
def small_fixture():
    """The 2x3 concave fixture shared by solver and policy tests."""
    inst = cm.Instance.from_bids([[0.9, 0.4, 0.7], [0.5, 0.8, 0.6]])
    spec = cm.UtilitySpec.power(0.5, 2)
    return inst, spec

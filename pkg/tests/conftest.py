import itertools

import numpy as np
import pytest


def simplex(n, k):
    """All length-k nonnegative integer vectors summing to n."""
    if k == 1:
        yield (n,)
        return
    for head in range(n + 1):
        for rest in simplex(n - head, k - 1):
            yield (head,) + rest


def enumerate_joint(model, m):
    """Exhaustive pmf table {y: prob} for a Dirac(m)-totaled model."""
    table = {}
    for y in simplex(m, model.tree.leaf_count):
        p = model.joint_log_pmf(np.array(y)).to_float()
        if p > 0:
            table[y] = p
    return table


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)

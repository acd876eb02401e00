import numpy as np
import pytest

from cholvec import DenseOracle, PivotOrder, SparsityPattern


def random_spd(rng, n, lo=0.5, hi=5.0):
    """Well-conditioned random SPD matrix with eigenvalues in [lo, hi]."""
    basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
    a = (basis * rng.uniform(lo, hi, n)) @ basis.T
    return 0.5 * (a + a.T)


def random_psd_rank(rng, n, rank):
    g = rng.standard_normal((n, rank))
    return g @ g.T


def random_pattern(rng, n, max_size=4):
    sets = []
    for i in range(n):
        k = int(rng.integers(0, min(i, max_size) + 1))
        sets.append(rng.choice(i, size=k, replace=False) if k else [])
    return SparsityPattern(sets)


def random_hybrid_pattern(rng, n, r, max_q=4):
    """Residual pattern valid for a rank-r hybrid: sets[i] within [r, i)."""
    sets = []
    for i in range(n):
        pool = np.arange(r, i)
        if i < r or pool.size == 0:
            sets.append([])
        else:
            k = int(rng.integers(0, min(max_q, pool.size) + 1))
            sets.append(rng.choice(pool, size=k, replace=False) if k else [])
    return SparsityPattern(sets)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def dense_oracle(a):
    return DenseOracle(a)


def random_order(rng, n):
    return PivotOrder(rng.permutation(n))

import numpy as np
import pytest

import cholvec as cv
from cholvec.sparsity import choose_candidates, choose_pattern_nn, choose_pattern_omp
from conftest import random_spd


def _views(rng, n, r):
    a = random_spd(rng, n)
    order = cv.PivotOrder(rng.permutation(n))
    part = cv.build_partial_cholesky(cv.DenseOracle(a), order, r)
    full = cv.PermutedOracle(cv.DenseOracle(a), order)
    res = cv.PermutedOracle(cv.ResidualOracle(cv.DenseOracle(a), part), order)
    return a, order, full, res


# -- candidate selection -------------------------------------------------------

def test_candidates_unrestricted_and_saturated(rng):
    _, _, full, _ = _views(rng, 8, 0)
    assert choose_candidates(full, 5, 0).tolist() == [0, 1, 2, 3, 4]
    assert choose_candidates(full, 5, 9).tolist() == [0, 1, 2, 3, 4]


def test_candidates_identity_ties_break_low():
    ora = cv.DenseOracle(np.eye(8))
    view = cv.PermutedOracle(ora, cv.PivotOrder.identity(8))
    assert choose_candidates(view, 6, 3).tolist() == [0, 1, 2]


def test_candidates_match_full_sort(rng):
    a = random_spd(rng, 10)
    view = cv.PermutedOracle(cv.DenseOracle(a), cv.PivotOrder.identity(10))
    got = choose_candidates(view, 8, 3)
    dists = [a[8, 8] - 2 * a[8, j] + a[j, j] for j in range(8)]
    expected = np.sort(np.argsort(dists, kind="stable")[:3])
    assert np.array_equal(got, expected)


def test_candidates_respect_lower_bound(rng):
    _, _, full, _ = _views(rng, 10, 4)
    cands = choose_candidates(full, 8, 2, lo=4)
    assert np.all(cands >= 4) and cands.size == 2


# -- nearest neighbors ----------------------------------------------------------

def test_nn_budget_saturation(rng):
    _, _, _, res = _views(rng, 9, 2)
    cands = np.array([3, 5, 6])
    assert np.array_equal(choose_pattern_nn(res, 8, 5, cands), np.array([3, 5, 6]))
    assert choose_pattern_nn(res, 8, 0, cands).size == 0


def test_nn_diagonal_residual_closed_form():
    # diagonal matrix: distance to k is R(i,i) + R(k,k), so NN picks the
    # smallest residual diagonals
    d = np.diag([4.0, 1.0, 3.0, 0.5, 2.0, 5.0])
    view = cv.PermutedOracle(cv.DenseOracle(d), cv.PivotOrder.identity(6))
    got = choose_pattern_nn(view, 5, 2, np.arange(5))
    assert got.tolist() == [1, 3]


def test_nn_matches_exhaustive_sort(rng):
    _, _, _, res = _views(rng, 12, 3)
    cands = np.arange(3, 10)
    got = choose_pattern_nn(res, 10, 4, cands)
    dists = np.array([
        res.entry(10, 10) - 2 * res.entry(10, int(k)) + res.entry(int(k), int(k))
        for k in cands
    ])
    expected = np.sort(cands[np.argsort(dists, kind="stable")[:4]])
    assert np.array_equal(got, expected)


def test_nn_candidate_order_invariance(rng):
    _, _, _, res = _views(rng, 12, 3)
    cands = np.arange(3, 11)
    shuffled = cands[rng.permutation(cands.size)]
    assert np.array_equal(
        choose_pattern_nn(res, 11, 3, cands), choose_pattern_nn(res, 11, 3, shuffled)
    )


# -- orthogonal matching pursuit ---------------------------------------------------

def test_omp_single_step_matches_nn_on_constant_diagonal():
    # constant residual diagonal makes the first OMP pick the NN pick
    a = np.array([
        [1.0, 0.3, 0.6, 0.1],
        [0.3, 1.0, 0.2, 0.4],
        [0.6, 0.2, 1.0, 0.2],
        [0.1, 0.4, 0.2, 1.0],
    ])
    view = cv.PermutedOracle(cv.DenseOracle(a), cv.PivotOrder.identity(4))
    cands = np.arange(3)
    nn = choose_pattern_nn(view, 3, 1, cands)
    omp = choose_pattern_omp(view, 3, 1, cands)
    assert np.array_equal(nn, omp)


def test_omp_saturated_budget_takes_everything(rng):
    _, _, _, res = _views(rng, 10, 2)
    cands = np.array([2, 4, 7])
    got = choose_pattern_omp(res, 8, 5, cands)
    assert np.array_equal(got, cands)
    final = cv.weighted_distance_sq(res, 8, got)
    assert final <= cv.weighted_distance_sq(res, 8, cands[:1]) + 1e-12


def test_omp_matches_stepwise_projection_oracle(rng):
    # oracle: recompute the projection distance for every candidate at every
    # greedy step through weighted_distance_sq
    _, _, _, res = _views(rng, 10, 0)
    i, q = 9, 3
    cands = np.arange(6)
    got = choose_pattern_omp(res, i, q, cands)
    selected: list[int] = []
    for _ in range(q):
        best, best_dist = None, np.inf
        for k in cands:
            if k in selected:
                continue
            dist = cv.weighted_distance_sq(res, i, sorted(selected + [int(k)]))
            if dist < best_dist - 1e-14:
                best, best_dist = int(k), dist
        selected.append(best)
    assert np.array_equal(got, np.sort(selected))


def test_omp_objective_monotone_and_dominant(rng):
    _, _, _, res = _views(rng, 12, 2)
    i = 11
    cands = np.arange(2, 9)
    dists = []
    for q in range(1, 6):
        got = choose_pattern_omp(res, i, q, cands)
        dists.append(cv.weighted_distance_sq(res, i, got))
    assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


def test_omp_restricting_candidates_never_helps(rng):
    _, _, _, res = _views(rng, 12, 0)
    i, q = 11, 3
    wide = choose_pattern_omp(res, i, q, np.arange(11))
    narrow = choose_pattern_omp(res, i, q, np.arange(5))
    assert cv.weighted_distance_sq(res, i, wide) <= cv.weighted_distance_sq(
        res, i, narrow
    ) + 1e-12


def test_omp_skips_degenerate_candidates(rng):
    # residual after pivoting on [0, 1]: those coordinates have zero energy
    _, order, _, res = _views(rng, 8, 2)
    got = choose_pattern_omp(res, 7, 3, np.arange(7))
    assert 0 not in got and 1 not in got


def test_chooser_validation():
    with pytest.raises(ValueError):
        cv.SparsityChooser("nn", q=-1)
    with pytest.raises(ValueError):
        cv.SparsityChooser("omp", q=5, c=3)
    with pytest.raises(ValueError):
        cv.SparsityChooser("other", q=1)


def test_build_residual_pattern_obeys_hybrid_constraints(rng):
    a, order, full, res = _views(rng, 14, 4)
    chooser = cv.SparsityChooser("omp", q=2, c=6)
    pattern = cv.build_residual_pattern(full, res, chooser, 4)
    for i, s in enumerate(pattern.sets):
        if i <= 4:
            assert s.size == 0
        else:
            assert np.all(s >= 4) and np.all(s < i) and s.size <= 2
    # pattern feeds straight into the hybrid
    factor = cv.build_hybrid(cv.DenseOracle(a), order, 4, pattern)
    assert factor.n == 14

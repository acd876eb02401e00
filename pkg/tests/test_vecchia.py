import numpy as np
import pytest

import cholvec as cv
from cholvec import smallsym
from conftest import random_hybrid_pattern, random_pattern, random_spd


def test_full_pattern_reproduces_matrix(rng):
    a = random_spd(rng, 9)
    order = cv.PivotOrder(rng.permutation(9))
    factor = cv.build_vecchia(cv.DenseOracle(a), order, cv.SparsityPattern.full(9))
    assert np.max(np.abs(cv.reconstruct_dense(factor) - a)) <= 1e-10 * np.abs(a).max()
    report = cv.kappa_from_dense(a, cv.reconstruct_dense(factor))
    assert report.log_kappa <= 1e-9


def test_empty_pattern_is_diagonal(rng):
    a = random_spd(rng, 6)
    order = cv.PivotOrder(rng.permutation(6))
    factor = cv.build_vecchia(cv.DenseOracle(a), order, cv.SparsityPattern.empty(6))
    assert all(row.size == 0 for row in factor.rows)
    assert np.allclose(factor.diag, np.diag(a)[order.perm])


def test_rows_match_direct_dense_solves(rng):
    # pattern of the classic 4-point illustration: S3={1}, S4={0,2} (0-based)
    a = random_spd(rng, 4)
    pattern = cv.SparsityPattern([[], [], [1], [0, 2]])
    factor = cv.build_vecchia(cv.DenseOracle(a), cv.PivotOrder.identity(4), pattern)
    for i in (2, 3):
        s = pattern.sets[i]
        x = np.linalg.solve(a[np.ix_(s, s)], -a[s, i])
        assert np.allclose(factor.rows[i], x, atol=1e-12)
        assert factor.diag[i] == pytest.approx(a[i, i] + x @ a[s, i], abs=1e-12)


def test_row_defining_equations_hold(rng):
    a = random_spd(rng, 10)
    order = cv.PivotOrder(rng.permutation(10))
    pattern = random_pattern(rng, 10)
    factor = cv.build_vecchia(cv.DenseOracle(a), order, pattern)
    at = a[np.ix_(order.perm, order.perm)]
    scale = np.abs(a).max()
    for i in range(10):
        s = pattern.sets[i]
        srow = np.concatenate([factor.rows[i], [1.0]])
        cols = np.concatenate([s, [i]])
        lhs = srow @ at[np.ix_(cols, s)] if s.size else np.zeros(0)
        assert np.all(np.abs(lhs) <= 1e-9 * scale)
        dval = float(srow @ at[cols, i])
        assert factor.diag[i] == pytest.approx(dval, abs=1e-9 * scale)


def test_diag_equals_projection_distance(rng):
    a = random_spd(rng, 8)
    order = cv.PivotOrder(rng.permutation(8))
    pattern = random_pattern(rng, 8)
    factor = cv.build_vecchia(cv.DenseOracle(a), order, pattern)
    view = cv.PermutedOracle(cv.DenseOracle(a), order)
    for i in range(8):
        expected = cv.weighted_distance_sq(view, i, pattern.sets[i])
        assert factor.diag[i] == pytest.approx(expected, abs=1e-9)


def test_pattern_growth_never_increases_diag(rng):
    a = random_spd(rng, 7)
    order = cv.PivotOrder.identity(7)
    small = random_pattern(rng, 7, max_size=2)
    grown = cv.SparsityPattern(
        [np.union1d(s, [int(i - 1)]) if i else [] for i, s in enumerate(small.sets)]
    )
    f_small = cv.build_vecchia(cv.DenseOracle(a), order, small)
    f_grown = cv.build_vecchia(cv.DenseOracle(a), order, grown)
    assert np.all(f_grown.diag <= f_small.diag + 1e-12)


def test_trace_normalization(rng):
    a = random_spd(rng, 12)
    order = cv.PivotOrder(rng.permutation(12))
    factor = cv.build_vecchia(cv.DenseOracle(a), order, random_pattern(rng, 12))
    ahat = cv.reconstruct_dense(factor)
    assert np.trace(a @ np.linalg.inv(ahat)) == pytest.approx(12.0, abs=1e-7 * 12)


def test_parallel_rows_match_serial(rng):
    a = random_spd(rng, 16)
    order = cv.PivotOrder(rng.permutation(16))
    pattern = random_pattern(rng, 16)
    serial_oracle = cv.DenseOracle(a)
    serial = cv.build_vecchia(serial_oracle, order, pattern)
    parallel_oracle = cv.DenseOracle(a)
    parallel = cv.build_vecchia(parallel_oracle, order, pattern, jobs=4)
    assert np.array_equal(serial.diag, parallel.diag)
    assert all(np.array_equal(x, y) for x, y in zip(serial.rows, parallel.rows))
    assert serial_oracle.lookup_count == parallel_oracle.lookup_count


def test_vecchia_lookup_count_is_triangle_plus_vector(rng):
    a = random_spd(rng, 8)
    ora = cv.DenseOracle(a)
    pattern = random_pattern(rng, 8)
    cv.build_vecchia(ora, cv.PivotOrder.identity(8), pattern)
    expected = sum(t * (t + 3) // 2 + 1 for t in pattern.sizes())
    assert ora.lookup_count == expected


# -- hybrid ---------------------------------------------------------------------

def test_hybrid_empty_pattern_is_cholesky_plus_diagonal(rng):
    a = random_spd(rng, 8)
    order = cv.PivotOrder(rng.permutation(8))
    factor = cv.build_hybrid(cv.DenseOracle(a), order, 3, cv.SparsityPattern.empty(8))
    part = cv.build_partial_cholesky(cv.DenseOracle(a), order, 3)
    part_dense = cv.reconstruct_dense(part)
    expected = part_dense + np.diag(np.diag(a - part_dense))
    assert np.allclose(cv.reconstruct_dense(factor), expected, atol=1e-10)


def test_hybrid_rank_zero_is_plain_vecchia(rng):
    a = random_spd(rng, 6)
    order = cv.PivotOrder.identity(6)
    pattern = random_pattern(rng, 6, max_size=2)
    hybrid = cv.build_hybrid(cv.DenseOracle(a), order, 0, pattern)
    plain = cv.build_vecchia(cv.DenseOracle(a), order, pattern)
    assert np.allclose(hybrid.diag, plain.diag)
    assert all(np.allclose(x, y) for x, y in zip(hybrid.rows, plain.rows))


def test_hybrid_rejects_pattern_below_pivot_block():
    with pytest.raises(ValueError):
        cv.build_hybrid(
            cv.DenseOracle(np.eye(6)), cv.PivotOrder.identity(6), 3,
            cv.SparsityPattern([[], [], [], [], [2], []]),
        )


def test_hybrid_equivalence_small(rng):
    a = random_spd(rng, 12)
    order = cv.PivotOrder(rng.permutation(12))
    pattern = random_hybrid_pattern(rng, 12, 4, max_q=2)
    disc = cv.check_equivalence(cv.DenseOracle(a), order, 4, pattern)
    assert disc <= 1e-8


def test_hybrid_full_rank_matches_exact(rng):
    a = random_spd(rng, 7)
    order = cv.PivotOrder(rng.permutation(7))
    disc = cv.check_equivalence(cv.DenseOracle(a), order, 7, cv.SparsityPattern.empty(7))
    assert disc <= 1e-10


def test_hybrid_lookup_budget(rng):
    n, r = 30, 6
    a = random_spd(rng, n)
    order = cv.PivotOrder(rng.permutation(n))
    pattern = random_hybrid_pattern(rng, n, r, max_q=3)
    ora = cv.DenseOracle(a)
    cv.build_hybrid(ora, order, r, pattern)
    sizes = pattern.sizes()
    budget = (r + 1) * n + sum(t * (t + 3) // 2 for t in sizes) + n
    assert ora.lookup_count <= budget


def test_residual_oracle_vanishes_on_pivot_block(rng):
    a = random_spd(rng, 9)
    order = cv.PivotOrder(rng.permutation(9))
    part = cv.build_partial_cholesky(cv.DenseOracle(a), order, 4)
    res = cv.ResidualOracle(cv.DenseOracle(a), part)
    lam_max = np.linalg.eigvalsh(a).max()
    for k in range(4):
        orig = int(order.perm[k])
        for j in range(9):
            assert abs(res.entry(orig, j)) <= 1e-10 * lam_max


def test_residual_oracle_block_reads_match_entries(rng):
    a = random_spd(rng, 8)
    part = cv.build_partial_cholesky(cv.DenseOracle(a), cv.PivotOrder.identity(8), 3)
    res = cv.ResidualOracle(cv.DenseOracle(a), part)
    idx = np.array([2, 5, 7])
    block = res.sym_block(idx)
    for x, i in enumerate(idx):
        for y, j in enumerate(idx):
            assert block[x, y] == pytest.approx(res.entry(int(i), int(j)), abs=1e-13)


# -- pattern augmentation ----------------------------------------------------------

def test_augment_pattern_formula():
    q = cv.SparsityPattern([[], [], [], [2]])
    out = cv.augment_pattern(2, q)
    assert out.sets[3].tolist() == [0, 1, 2]
    assert cv.augment_pattern(0, q).sets[3].tolist() == [2]
    full = cv.augment_pattern(4, cv.SparsityPattern.empty(4))
    assert full == cv.SparsityPattern.full(4)


# -- direct log-determinant ---------------------------------------------------------

def test_logdet_direct_identity():
    assert cv.logdet_direct(cv.VecchiaFactor.identity(5)) == 0.0


def test_logdet_direct_full_pattern_matches_dense(rng):
    a = random_spd(rng, 10)
    factor = cv.build_vecchia(
        cv.DenseOracle(a), cv.PivotOrder.identity(10), cv.SparsityPattern.full(10)
    )
    assert cv.logdet_direct(factor) == pytest.approx(
        np.linalg.slogdet(a)[1], abs=1e-8
    )


def test_logdet_direct_rejects_zero_diag():
    factor = cv.VecchiaFactor(
        cv.PivotOrder.identity(3), cv.SparsityPattern.empty(3),
        tuple(np.empty(0) for _ in range(3)), np.array([1.0, 0.0, 2.0]),
    )
    with pytest.raises(cv.NonSPDFactor):
        cv.logdet_direct(factor)


# -- serialization -------------------------------------------------------------------

def test_factor_roundtrip_is_lossless(rng, tmp_path):
    a = random_spd(rng, 9)
    order = cv.PivotOrder(rng.permutation(9))
    factor = cv.build_hybrid(
        cv.DenseOracle(a), order, 3, random_hybrid_pattern(rng, 9, 3)
    )
    path = tmp_path / "factor.json"
    cv.save_factor(factor, path)
    loaded = cv.load_factor(path)
    assert np.array_equal(loaded.order.perm, factor.order.perm)
    assert loaded.pattern == factor.pattern
    assert np.array_equal(loaded.diag, factor.diag)
    assert all(np.array_equal(x, y) for x, y in zip(loaded.rows, factor.rows))


def test_load_factor_rejects_other_files(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        cv.load_factor(path)


def test_min_norm_rows_on_singular_pattern_block():
    # duplicated coordinates make At(S,S) singular; the diagonal entry is the
    # projection value regardless, and rows are the minimum-norm solution
    base = np.array([[1.0, 1.0, 0.5], [1.0, 1.0, 0.5], [0.5, 0.5, 2.0]])
    base += 1e-9 * np.eye(3)
    factor = cv.build_vecchia(
        cv.DenseOracle(base), cv.PivotOrder.identity(3),
        cv.SparsityPattern([[], [0], [0, 1]]),
    )
    # rows 0 and 1 are duplicates: coefficients split evenly (min-norm)
    assert factor.rows[2][0] == pytest.approx(factor.rows[2][1], abs=1e-6)
    expected = 2.0 - np.array([0.5, 0.5]) @ smallsym.pseudo_solve(
        base[:2, :2], np.array([0.5, 0.5])
    )
    assert factor.diag[2] == pytest.approx(expected, rel=1e-8)

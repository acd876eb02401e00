"""Vecchia construction, the Cholesky+Vecchia hybrid, and their equivalence.

Row ``i`` of a Vecchia factor solves the local projection system

    [C(i, S_i)  1] @ At(S_i + [i], S_i + [i]) = [0  d_i]

in permuted coordinates; the diagonal entry ``d_i = alpha + x^T v`` is clamped
at zero because rounding can leave it at ``-eps``. Rows are independent, so
construction optionally fans out over a thread pool against the shared
oracle.

The hybrid builds a rank-r partial Cholesky, a Vecchia approximation of the
lazily evaluated residual, and assembles the combined inverse-Cholesky factor
whose sparsity pattern is the pivot block joined with the residual pattern.
Row systems use a pseudoinverse with a relative eigenvalue cutoff, which
yields minimum-norm coefficients when a pattern block is singular (the
diagonal entry is the projection value either way).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import smallsym
from .core import (
    PartialCholeskyFactor,
    PermutedOracle,
    PivotOrder,
    SparsityPattern,
    VecchiaFactor,
    reconstruct_dense,
    _index_array,
)
from .errors import NonSPDFactor
from .partial import build_partial_cholesky

FORMAT_NAME = "cholvec-factor"
FORMAT_VERSION = 1


class ResidualOracle:
    """Residual ``A - P L D L^T P^T`` of a partial Cholesky factor.

    Entries are evaluated lazily in original coordinates: one base lookup plus
    a length-r inner product per entry. Lookup counting stays with the base
    oracle. Entries whose permuted position falls inside the pivot block are
    replicated by the factor, so they evaluate to zero up to roundoff.
    """

    def __init__(self, base, factor: PartialCholeskyFactor):
        if base.n != factor.n:
            raise ValueError("factor size does not match oracle dimension")
        self.base = base
        self.factor = factor
        self.n = base.n
        self._f = factor.original_rows()  # (n, r), original coordinates
        self._fd = self._f * factor.diag

    @property
    def lookup_count(self):
        return self.base.lookup_count

    def entry(self, i, j):
        return self.base.entry(i, j) - float(self._fd[i] @ self._f[j])

    def column(self, j, rows=None):
        rows = np.arange(self.n) if rows is None else _index_array(rows)
        return self.base.column(j, rows=rows) - self._fd[rows] @ self._f[j]

    def vector(self, i, idx):
        idx = _index_array(idx)
        return self.base.vector(i, idx) - self._fd[idx] @ self._f[i]

    def sym_block(self, idx):
        idx = _index_array(idx)
        return self.base.sym_block(idx) - self._fd[idx] @ self._f[idx].T

    def diagonal(self):
        return self.base.diagonal() - np.sum(self._fd * self._f, axis=1)


def _vecchia_row(view, i, subset):
    """Coefficients and diagonal entry for one row of Eq.-style projection."""
    if subset.size == 0:
        return np.empty(0), max(float(view.entry(i, i)), 0.0)
    m = view.sym_block(subset)
    v = view.vector(i, subset)
    alpha = view.entry(i, i)
    x = -smallsym.pseudo_solve(m, v)
    return x, max(float(alpha + x @ v), 0.0)


def build_vecchia(oracle, order: PivotOrder, pattern: SparsityPattern, jobs: int = 1):
    """Conventional Vecchia approximation for a given order and pattern."""
    n = oracle.n
    if pattern.n != n:
        raise ValueError("pattern size does not match oracle dimension")
    view = PermutedOracle(oracle, order)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(lambda i: _vecchia_row(view, i, pattern.sets[i]), range(n))
            )
    else:
        results = [_vecchia_row(view, i, pattern.sets[i]) for i in range(n)]
    rows = tuple(row for row, _ in results)
    diag = np.array([d for _, d in results])
    return VecchiaFactor(order, pattern, rows, diag)


def augment_pattern(r: int, q_pattern: SparsityPattern) -> SparsityPattern:
    """Pattern of the hybrid: ``({0..r-1} | Q_i) & {0..i-1}`` per row."""
    sets = []
    for i, q in enumerate(q_pattern.sets):
        block = np.arange(min(r, i))
        sets.append(np.union1d(block, q[q < i]))
    return SparsityPattern(sets)


def _check_hybrid_pattern(r, q_pattern):
    for i, q in enumerate(q_pattern.sets):
        if i < r:
            continue
        if q.size and (q[0] < r or q[-1] >= i):
            raise ValueError(
                f"row {i}: residual pattern entries must lie in [{r}, {i})"
            )


def _invert_unit_lower(l11: np.ndarray) -> np.ndarray:
    """Rows of the inverse of a unit lower-triangular matrix, by substitution."""
    r = l11.shape[0]
    out = np.eye(r)
    for i in range(r):
        if i:
            out[i, :i] -= l11[i, :i] @ out[:i, :i]
    return out


def build_hybrid(oracle, order: PivotOrder, r: int, q_pattern: SparsityPattern,
                 jobs: int = 1):
    """Partial Cholesky of rank r plus a Vecchia approximation of the residual.

    ``q_pattern.sets[i]`` must be a subset of ``{r, ..., i-1}`` for rows past
    the pivot block (entries for rows inside the block are ignored). The
    returned factor carries the augmented pattern with a dense leading block
    per residual row; construction costs O(r n) base lookups plus the
    triangle-plus-vector reads of each residual row system.
    """
    n = oracle.n
    if not 0 <= r <= n:
        raise ValueError("rank must satisfy 0 <= r <= n")
    if q_pattern.n != n:
        raise ValueError("pattern size does not match oracle dimension")
    _check_hybrid_pattern(r, q_pattern)
    if r == 0:
        return build_vecchia(oracle, order, q_pattern, jobs=jobs)

    part = build_partial_cholesky(oracle, order, r)
    res_view = PermutedOracle(ResidualOracle(oracle, part), order)

    def residual_row(i):
        return _vecchia_row(res_view, i, q_pattern.sets[i])

    if r < n:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                res_rows = list(pool.map(residual_row, range(r, n)))
        else:
            res_rows = [residual_row(i) for i in range(r, n)]
    else:
        res_rows = []

    l11_inv = _invert_unit_lower(part.lower[:r, :r])
    w = part.lower[r:, :r] @ l11_inv  # rows of L21 @ L11^-1

    sets, rows = [], []
    diag = np.zeros(n)
    diag[:r] = part.diag
    block = np.arange(r)
    for i in range(r):
        sets.append(np.arange(i))
        rows.append(l11_inv[i, :i].copy())
    for i in range(r, n):
        coeffs, d = res_rows[i - r]
        q = q_pattern.sets[i]
        left = -(w[i - r] + (coeffs @ w[q - r] if q.size else 0.0))
        sets.append(np.concatenate([block, q]))
        rows.append(np.concatenate([left, coeffs]))
        diag[i] = d
    return VecchiaFactor(order, SparsityPattern(sets), tuple(rows), diag)


def check_equivalence(oracle, order: PivotOrder, r: int,
                      q_pattern: SparsityPattern) -> float:
    """Max relative discrepancy between the hybrid and the direct construction.

    Builds the hybrid factor and a conventional Vecchia factor on the
    augmented pattern, then compares every row coefficient, every diagonal
    entry, and the two dense reconstructions. Intended for small instances.
    """
    hybrid = build_hybrid(oracle, order, r, q_pattern)
    direct = build_vecchia(oracle, order, augment_pattern(r, q_pattern))
    worst = 0.0
    for ch, cd in zip(hybrid.rows, direct.rows):
        if cd.size:
            scale = 1.0 + float(np.max(np.abs(cd)))
            worst = max(worst, float(np.max(np.abs(ch - cd))) / scale)
    dscale = 1.0 + np.abs(direct.diag)
    worst = max(worst, float(np.max(np.abs(hybrid.diag - direct.diag) / dscale)))
    dh = reconstruct_dense(hybrid)
    dd = reconstruct_dense(direct)
    worst = max(
        worst,
        float(np.max(np.abs(dh - dd))) / (1.0 + float(np.max(np.abs(dd)))),
    )
    return worst


def logdet_direct(factor: VecchiaFactor) -> float:
    """``sum(log diag)``; requires a strictly positive diagonal."""
    d = factor.diag
    cut = smallsym.EIG_CUTOFF * float(np.max(d, initial=0.0))
    if np.any(d <= cut):
        bad = int(np.flatnonzero(d <= cut)[0])
        raise NonSPDFactor(f"diagonal entry {bad} is zero up to cutoff")
    return float(np.sum(np.log(d)))


def save_factor(factor: VecchiaFactor, path) -> None:
    """Write a factor as versioned JSON; floats round-trip exactly via repr."""
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n": factor.n,
        "perm": factor.order.perm.tolist(),
        "pattern": [s.tolist() for s in factor.pattern.sets],
        "rows": [r.tolist() for r in factor.rows],
        "diag": factor.diag.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_factor(path) -> VecchiaFactor:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT_NAME:
        raise ValueError("not a factor file")
    if payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported factor format version {payload.get('version')}")
    return VecchiaFactor(
        PivotOrder(np.array(payload["perm"], dtype=np.intp)),
        SparsityPattern(payload["pattern"]),
        tuple(np.array(r, dtype=float) for r in payload["rows"]),
        np.array(payload["diag"], dtype=float),
    )

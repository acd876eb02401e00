"""Core abstractions: entry oracles, pivot orders, sparsity patterns, factors.

Conventions used throughout the package:

* All indices in the Python API are 0-based.
* A :class:`PivotOrder` stores ``perm`` with ``perm[k]`` = original index at
  permuted position ``k``; the permuted matrix is ``At(k, l) = A(perm[k],
  perm[l])``.
* Factor types live in permuted coordinates. Reconstruction maps back with
  ``Ahat[perm[k], perm[l]] = Ahat_perm[k, l]``.
* Factor arrays are frozen (non-writeable) after construction, so factors can
  be shared freely across threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import smallsym


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _index_array(idx):
    out = np.asarray(idx, dtype=np.intp).reshape(-1)
    return out


class EntryOracle:
    """Symmetric PSD matrix exposed through counted entry lookups.

    Subclasses implement ``_value(i, j)``. Every public read increments the
    lookup counter by exactly the number of entries requested; symmetric block
    reads count only the upper triangle they touch. The counter is guarded by
    a lock so oracles can be shared across threads.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("oracle dimension must be positive")
        self.n = int(n)
        self._count = 0
        self._count_lock = threading.Lock()

    # -- subclass interface -------------------------------------------------
    def _value(self, i: int, j: int) -> float:
        raise NotImplementedError

    # -- counting -----------------------------------------------------------
    @property
    def lookup_count(self) -> int:
        return self._count

    def _add_lookups(self, k: int) -> None:
        with self._count_lock:
            self._count += int(k)

    # -- counted reads ------------------------------------------------------
    def entry(self, i: int, j: int) -> float:
        self._add_lookups(1)
        return self._value(i, j)

    def column(self, j: int, rows=None) -> np.ndarray:
        """Values ``A(rows, j)``; defaults to the full column."""
        rows = np.arange(self.n) if rows is None else _index_array(rows)
        self._add_lookups(rows.size)
        return np.array([self._value(int(i), j) for i in rows])

    def vector(self, i: int, idx) -> np.ndarray:
        """Values ``A(idx, i)``."""
        idx = _index_array(idx)
        self._add_lookups(idx.size)
        return np.array([self._value(int(j), i) for j in idx])

    def sym_block(self, idx) -> np.ndarray:
        """Principal submatrix ``A(idx, idx)``, reading only its upper triangle."""
        idx = _index_array(idx)
        t = idx.size
        self._add_lookups(t * (t + 1) // 2)
        out = np.empty((t, t))
        for a in range(t):
            for b in range(a, t):
                val = self._value(int(idx[a]), int(idx[b]))
                out[a, b] = val
                out[b, a] = val
        return out

    def diagonal(self) -> np.ndarray:
        self._add_lookups(self.n)
        return np.array([self._value(i, i) for i in range(self.n)])


class DenseOracle(EntryOracle):
    """Entry oracle over an in-memory symmetric matrix (test workhorse)."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("expected a square matrix")
        super().__init__(values.shape[0])
        self.values = _frozen(0.5 * (values + values.T))

    def _value(self, i, j):
        return float(self.values[i, j])

    def column(self, j, rows=None):
        rows = np.arange(self.n) if rows is None else _index_array(rows)
        self._add_lookups(rows.size)
        return self.values[rows, j].copy()

    def vector(self, i, idx):
        idx = _index_array(idx)
        self._add_lookups(idx.size)
        return self.values[idx, i].copy()

    def sym_block(self, idx):
        idx = _index_array(idx)
        self._add_lookups(idx.size * (idx.size + 1) // 2)
        return self.values[np.ix_(idx, idx)].copy()

    def diagonal(self):
        self._add_lookups(self.n)
        return np.diag(self.values).copy()


class PermutedOracle:
    """Read-only view of an oracle in permuted coordinates.

    Delegates every read to the base oracle, so lookup counting stays with the
    base. ``entry(k, l)`` returns ``base.entry(perm[k], perm[l])``.
    """

    def __init__(self, base, order: "PivotOrder"):
        if base.n != order.n:
            raise ValueError("order size does not match oracle dimension")
        self.base = base
        self.perm = order.perm
        self.n = base.n

    @property
    def lookup_count(self):
        return self.base.lookup_count

    def entry(self, i, j):
        return self.base.entry(int(self.perm[i]), int(self.perm[j]))

    def column(self, j, rows=None):
        rows = np.arange(self.n) if rows is None else _index_array(rows)
        return self.base.column(int(self.perm[j]), rows=self.perm[rows])

    def vector(self, i, idx):
        return self.base.vector(int(self.perm[i]), self.perm[_index_array(idx)])

    def sym_block(self, idx):
        return self.base.sym_block(self.perm[_index_array(idx)])

    def diagonal(self):
        return np.array([self.base.entry(int(p), int(p)) for p in self.perm])


@dataclass(frozen=True)
class PivotOrder:
    """Permutation of ``{0, ..., n-1}``; position ``k`` holds pivot ``perm[k]``."""

    perm: np.ndarray
    inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        perm = _index_array(self.perm)
        n = perm.size
        if n == 0 or np.any(np.sort(perm) != np.arange(n)):
            raise ValueError("perm must be a permutation of 0..n-1")
        inv = np.empty(n, dtype=np.intp)
        inv[perm] = np.arange(n)
        perm.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "inv", inv)

    @property
    def n(self) -> int:
        return self.perm.size

    @classmethod
    def identity(cls, n: int) -> "PivotOrder":
        return cls(np.arange(n))

    @classmethod
    def from_pivots(cls, pivots, n: int) -> "PivotOrder":
        """Selected pivots first (in selection sequence), the rest ascending."""
        pivots = _index_array(pivots)
        if np.unique(pivots).size != pivots.size:
            raise ValueError("pivots contain duplicates")
        rest = np.setdiff1d(np.arange(n), pivots)
        return cls(np.concatenate([pivots, rest]))


class SparsityPattern:
    """Per-row index sets ``sets[i]`` subset of ``{0, ..., i-1}`` (permuted coords)."""

    def __init__(self, sets):
        cleaned = []
        for i, s in enumerate(sets):
            s = np.unique(_index_array(s))
            if s.size and (s[0] < 0 or s[-1] >= i):
                raise ValueError(f"row {i}: pattern entries must lie in [0, {i})")
            s.setflags(write=False)
            cleaned.append(s)
        self.sets = tuple(cleaned)

    @property
    def n(self) -> int:
        return len(self.sets)

    @classmethod
    def empty(cls, n: int) -> "SparsityPattern":
        return cls([[] for _ in range(n)])

    @classmethod
    def full(cls, n: int) -> "SparsityPattern":
        return cls([np.arange(i) for i in range(n)])

    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.sets])

    def total(self) -> int:
        return int(self.sizes().sum())

    def __eq__(self, other):
        return isinstance(other, SparsityPattern) and len(self.sets) == len(
            other.sets
        ) and all(np.array_equal(a, b) for a, b in zip(self.sets, other.sets))


@dataclass(frozen=True)
class PartialCholeskyFactor:
    """Rank-r approximation ``P L diag(d) L^T P^T`` in permuted coordinates.

    ``lower`` is n-by-r with a unit diagonal block (``lower[j, j] = 1`` and
    zeros above it); ``diag`` holds the r nonnegative pivot values.
    """

    order: PivotOrder
    rank: int
    lower: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _frozen(self.lower))
        object.__setattr__(self, "diag", _frozen(self.diag))
        n = self.order.n
        if self.lower.shape != (n, self.rank) or self.diag.shape != (self.rank,):
            raise ValueError("factor shapes are inconsistent")
        if np.any(self.diag < 0):
            raise ValueError("diag entries must be nonnegative")

    @property
    def n(self) -> int:
        return self.order.n

    def original_rows(self) -> np.ndarray:
        """Rows of ``P @ L`` indexed by original coordinates."""
        return self.lower[self.order.inv, :]


@dataclass(frozen=True)
class VecchiaFactor:
    """Sparse inverse-Cholesky approximation ``P C^-1 diag(d) C^-T P^T``.

    ``rows[i]`` holds the off-diagonal coefficients ``C(i, pattern.sets[i])``;
    the unit diagonal of C is implicit, off-pattern entries are zero by
    representation, and ``diag`` is nonnegative.
    """

    order: PivotOrder
    pattern: SparsityPattern
    rows: tuple
    diag: np.ndarray

    def __post_init__(self):
        rows = tuple(_frozen(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "diag", _frozen(self.diag))
        n = self.order.n
        if self.pattern.n != n or len(rows) != n or self.diag.shape != (n,):
            raise ValueError("factor shapes are inconsistent")
        for i, (row, s) in enumerate(zip(rows, self.pattern.sets)):
            if row.shape != (s.size,):
                raise ValueError(f"row {i} does not match its pattern")
        if np.any(self.diag < 0):
            raise ValueError("diag entries must be nonnegative")

    @property
    def n(self) -> int:
        return self.order.n

    @classmethod
    def identity(cls, n: int) -> "VecchiaFactor":
        return cls(
            PivotOrder.identity(n), SparsityPattern.empty(n),
            tuple(np.empty(0) for _ in range(n)), np.ones(n),
        )

    def _flat(self):
        """Flattened (row, col, value) triplets of C's off-diagonal, cached."""
        cached = self.__dict__.get("_flat_cache")
        if cached is None:
            sizes = self.pattern.sizes()
            rows_idx = np.repeat(np.arange(self.n), sizes)
            cols_idx = (np.concatenate(self.pattern.sets)
                        if sizes.sum() else np.empty(0, dtype=np.intp))
            vals = (np.concatenate(self.rows)
                    if sizes.sum() else np.empty(0))
            cached = (rows_idx, cols_idx, vals)
            object.__setattr__(self, "_flat_cache", cached)
        return cached

    # C and C^T act in permuted coordinates; all four are O(total pattern).
    def apply_c(self, y: np.ndarray) -> np.ndarray:
        rows_idx, cols_idx, vals = self._flat()
        out = y.astype(float).copy()
        if vals.size:
            out += np.bincount(rows_idx, weights=vals * y[cols_idx], minlength=self.n)
        return out

    def apply_ct(self, y: np.ndarray) -> np.ndarray:
        rows_idx, cols_idx, vals = self._flat()
        out = y.astype(float).copy()
        if vals.size:
            out += np.bincount(cols_idx, weights=vals * y[rows_idx], minlength=self.n)
        return out

    def solve_c(self, y: np.ndarray) -> np.ndarray:
        """Forward substitution for ``C x = y``."""
        x = y.astype(float).copy()
        for i, (s, row) in enumerate(zip(self.pattern.sets, self.rows)):
            if s.size:
                x[i] -= row @ x[s]
        return x

    def solve_ct(self, y: np.ndarray) -> np.ndarray:
        """Backward substitution for ``C^T x = y``."""
        x = y.astype(float).copy()
        for i in range(self.n - 1, -1, -1):
            s = self.pattern.sets[i]
            if s.size:
                x[s] -= self.rows[i] * x[i]
        return x

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return factor_matvec(self, v)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return factor_solve(self, b)


def weighted_distance_sq(oracle, i: int, subset) -> float:
    """Squared A-weighted distance from ``e_i`` to ``span{e_j : j in subset}``.

    Evaluates the Schur complement ``A(i,i) - A(i,S) A(S,S)^+ A(S,i)`` with a
    pseudoinverse solve, clamped to be nonnegative.
    """
    subset = _index_array(subset)
    if np.any(subset == i):
        raise ValueError("subset must not contain i")
    alpha = oracle.entry(i, i)
    if subset.size == 0:
        return max(float(alpha), 0.0)
    m = oracle.sym_block(subset)
    v = oracle.vector(i, subset)
    return max(float(alpha) - smallsym.pseudo_quadratic(m, v), 0.0)


def pointwise_distance_sq(oracle, i: int, j: int) -> float:
    """Squared A-weighted distance ``d_A(e_i, e_j)^2 = A(i,i) - 2A(i,j) + A(j,j)``."""
    if i == j:
        return 0.0
    val = oracle.entry(i, i) - 2.0 * oracle.entry(i, j) + oracle.entry(j, j)
    return max(float(val), 0.0)


def reconstruct_dense(factor) -> np.ndarray:
    """Dense reconstruction of a factored approximation (test-scale only).

    For a Vecchia factor the triangular inverse is applied column-by-column
    through forward substitution; the inverse matrix is never formed from an
    explicit inversion of the assembled approximation.
    """
    n = factor.n
    perm = factor.order.perm
    if isinstance(factor, PartialCholeskyFactor):
        core = (factor.lower * factor.diag) @ factor.lower.T
    elif isinstance(factor, VecchiaFactor):
        # Solve C Y = I one pass over rows, all columns vectorized.
        y = np.eye(n)
        for i, (s, row) in enumerate(zip(factor.pattern.sets, factor.rows)):
            if s.size:
                y[i, :] -= row @ y[s, :]
        core = (y * factor.diag) @ y.T
    else:
        raise TypeError(f"unsupported factor type: {type(factor).__name__}")
    out = np.empty((n, n))
    out[np.ix_(perm, perm)] = 0.5 * (core + core.T)
    return out


def factor_matvec(factor, v: np.ndarray) -> np.ndarray:
    """Product of the factored approximation with a vector (original coords)."""
    v = np.asarray(v, dtype=float)
    perm = factor.order.perm
    vt = v[perm]
    if isinstance(factor, PartialCholeskyFactor):
        wt = factor.lower @ (factor.diag * (factor.lower.T @ vt))
    elif isinstance(factor, VecchiaFactor):
        wt = factor.solve_c(factor.diag * factor.solve_ct(vt))
    else:
        raise TypeError(f"unsupported factor type: {type(factor).__name__}")
    out = np.empty_like(wt)
    out[perm] = wt
    return out


def factor_solve(factor: VecchiaFactor, b: np.ndarray) -> np.ndarray:
    """Pseudo-solve ``x = P C^T D^+ C P^T b`` for a Vecchia factor.

    Components with ``diag`` at or below the relative cutoff are zeroed, so
    the result is consistent with the approximation's pseudoinverse.
    """
    b = np.asarray(b, dtype=float)
    perm = factor.order.perm
    t = factor.apply_c(b[perm])
    d = factor.diag
    cut = smallsym.EIG_CUTOFF * float(np.max(d, initial=0.0))
    inv = np.where(d > cut, 1.0 / np.where(d > cut, d, 1.0), 0.0)
    xt = factor.apply_ct(inv * t)
    out = np.empty_like(xt)
    out[perm] = xt
    return out

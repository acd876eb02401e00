"""Per-row sparsity selection for the Vecchia residual component.

The two-step procedure restricts each row to a candidate set chosen by
pointwise distance under the *full* permuted matrix, then runs nearest
neighbors or orthogonal matching pursuit under the *residual* metric. This
asymmetry (candidates from the full matrix, refinement on the residual) is
deliberate and preserved exactly.

All indices are permuted coordinates; oracle arguments are permuted views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SparsityPattern, _index_array

#: candidates whose residual self-energy falls at or below DEGENERATE * scale
#: are skipped by OMP (their normalized correlation is undefined)
DEGENERATE = 1e-12


@dataclass(frozen=True)
class SparsityChooser:
    """Row-pattern selection rule: variant, per-row budget q, candidate count c."""

    variant: str  # "nn" | "omp"
    q: int
    c: int = 0  # 0 = unrestricted
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("nn", "omp"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if self.c != 0 and self.c < self.q:
            raise ValueError("candidate count must be 0 or >= q")


def _pointwise_sq(view, i, idx, diag=None):
    """Squared pointwise distances d(e_i, e_j)^2 for j in idx."""
    idx = _index_array(idx)
    cross = view.vector(i, idx)
    if diag is None:
        dii = view.entry(i, i)
        djj = np.array([view.entry(int(j), int(j)) for j in idx])
    else:
        dii = diag[i]
        djj = diag[idx]
    return np.maximum(dii - 2.0 * cross + djj, 0.0)


def choose_candidates(view, i: int, c: int, lo: int = 0, diag=None) -> np.ndarray:
    """The ``min(c, i-lo)`` indices in ``[lo, i)`` closest to ``i``.

    Distance is the pointwise metric under the full permuted matrix; ties
    break toward the lowest index. ``c = 0`` means unrestricted. Passing a
    cached ``diag`` avoids re-reading diagonal entries row after row.
    """
    pool = np.arange(lo, i)
    if pool.size == 0 or (c != 0 and c >= pool.size):
        return pool
    if c == 0:
        return pool
    dists = _pointwise_sq(view, i, pool, diag=diag)
    take = np.argsort(dists, kind="stable")[:c]
    return np.sort(pool[take])


def choose_pattern_nn(res_view, i: int, q: int, candidates, diag=None) -> np.ndarray:
    """The ``q`` candidates nearest to ``i`` in the residual pointwise metric."""
    candidates = _index_array(candidates)
    if q >= candidates.size:
        return np.sort(candidates)
    if q == 0:
        return np.empty(0, dtype=np.intp)
    dists = _pointwise_sq(res_view, i, candidates, diag=diag)
    take = np.argsort(dists, kind="stable")[:q]
    return np.sort(candidates[take])


def choose_pattern_omp(res_view, i: int, q: int, candidates, diag=None) -> np.ndarray:
    """Greedy projection-distance minimization over the candidate set.

    Batch style: materializes the candidate Gram block once, then grows an
    incremental Cholesky factor of the selected block so that each step costs
    O(|candidates| * (step+1)). Each step picks the candidate whose inclusion
    most reduces the squared projection distance (ties toward the lowest
    index); candidates with degenerate residual energy are skipped.
    """
    candidates = np.sort(_index_array(candidates))
    m = candidates.size
    if q == 0 or m == 0:
        return np.empty(0, dtype=np.intp)
    gram = res_view.sym_block(candidates)
    target = res_view.vector(i, candidates)
    scale = max(float(np.max(np.diag(gram), initial=0.0)), 0.0)
    if scale <= 0.0:
        return np.empty(0, dtype=np.intp)
    q = min(q, m)

    chol = np.zeros((q, q))  # lower Cholesky of gram[selected][:, selected]
    z = np.zeros((q, m))  # z[:k, j] = chol[:k,:k]^-1 gram[selected, j]
    y = np.zeros(q)  # y[:k] = chol[:k,:k]^-1 target[selected]
    selected: list[int] = []
    picked = np.zeros(m, dtype=bool)
    for step in range(q):
        energy = np.diag(gram) - np.sum(z[:step] ** 2, axis=0)
        corr = target - z[:step].T @ y[:step]
        usable = ~picked & (energy > DEGENERATE * scale)
        if not np.any(usable):
            break
        gain = np.where(usable, corr**2 / np.where(usable, energy, 1.0), -np.inf)
        k = int(np.argmax(gain))  # argmax takes the first max: lowest index
        root = np.sqrt(energy[k])
        chol[step, :step] = z[:step, k]
        chol[step, step] = root
        y[step] = corr[k] / root
        z[step] = (gram[k] - z[:step].T @ z[:step, k]) / root
        picked[k] = True
        selected.append(k)
    return np.sort(candidates[np.array(selected, dtype=np.intp)])


def build_residual_pattern(full_view, res_view, chooser: SparsityChooser,
                           r: int, diag_full=None, diag_res=None) -> SparsityPattern:
    """Residual-component pattern for every row past the pivot block.

    Step 1 picks candidates from ``[r, i)`` under the full-matrix metric;
    step 2 refines them with the configured rule under the residual metric.
    Diagonals are read once and shared across rows.
    """
    n = full_view.n
    if diag_full is None:
        diag_full = full_view.diagonal()
    if diag_res is None:
        diag_res = res_view.diagonal()
    sets = [np.empty(0, dtype=np.intp) for _ in range(min(r, n))]
    for i in range(r, n):
        cands = choose_candidates(full_view, i, chooser.c, lo=r, diag=diag_full)
        if chooser.variant == "nn":
            sets.append(choose_pattern_nn(res_view, i, chooser.q, cands, diag=diag_res))
        else:
            sets.append(choose_pattern_omp(res_view, i, chooser.q, cands, diag=diag_res))
    return SparsityPattern(sets)

"""Partial pivoted Cholesky and pivot-selection strategies.

Selection rules operate on two running distance vectors over original indices:

* ``residual_diag[j]`` -- squared A-weighted distance from ``e_j`` to the span
  of the selected pivot vectors (the diagonal of the Schur-complement
  residual);
* ``pointwise[j]`` -- minimum squared A-weighted distance from ``e_j`` to any
  single selected pivot vector.

From an empty pivot set both vectors start at ``diag(A)``, so the greedy and
sampled rules all begin by favoring the largest diagonal entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import PartialCholeskyFactor, PivotOrder, weighted_distance_sq

#: residual diagonals at or below INELIGIBLE * trace(A) cannot be selected
INELIGIBLE = 1e-12

_VARIANTS = ("adaptive", "rpc", "sds", "cpc", "fps", "fixed")


@dataclass(frozen=True)
class PivotChooser:
    """Pivot-selection rule plus the seed that fixes sampling and tie-breaks."""

    variant: str
    seed: int = 0
    order: PivotOrder | None = None  # fixed variant only
    exhaustive: bool = False  # adaptive variant: recompute objective per candidate

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "fixed" and self.order is None:
            raise ValueError("fixed variant requires an order")

    @classmethod
    def rpc(cls, seed=0):
        return cls("rpc", seed)

    @classmethod
    def sds(cls, seed=0):
        return cls("sds", seed)

    @classmethod
    def cpc(cls, seed=0):
        return cls("cpc", seed)

    @classmethod
    def fps(cls, seed=0):
        return cls("fps", seed)

    @classmethod
    def adaptive(cls, exhaustive=False):
        return cls("adaptive", exhaustive=exhaustive)

    @classmethod
    def fixed(cls, order: PivotOrder):
        return cls("fixed", order=order)


@dataclass
class DistanceState:
    """Running distance vectors (original coordinates) after each pivot."""

    residual_diag: np.ndarray
    pointwise: np.ndarray
    pivots: list


def build_partial_cholesky(oracle, order: PivotOrder, r: int, collect_state=False):
    """Rank-r partial Cholesky with a fixed pivot order.

    Reads exactly ``r`` full columns of A (r*n lookups; plus one diagonal
    read when ``collect_state`` is set). Steps whose residual pivot value
    falls at or below the relative cutoff leave a zero column and a zero
    diagonal entry.
    """
    n = oracle.n
    if not 0 <= r <= n:
        raise ValueError("rank must satisfy 0 <= r <= n")
    perm = order.perm
    fmat = np.zeros((n, r))  # P @ L, original row coordinates
    diag = np.zeros(r)
    state = None
    diag0 = None
    if collect_state:
        diag0 = np.maximum(oracle.diagonal(), 0.0)
        state = DistanceState(diag0.copy(), diag0.copy(), [])
    scale = 0.0
    for i in range(r):
        u = int(perm[i])
        col = oracle.column(u)
        scale = max(scale, abs(float(col[u])))
        v = col - fmat[:, :i] @ (diag[:i] * fmat[u, :i]) if i else col.astype(float)
        piv = float(v[u])
        if piv > INELIGIBLE * scale and piv > 0.0:
            f = v / piv
            f[perm[:i]] = 0.0  # replicated rows carry only roundoff here
            f[u] = 1.0
            fmat[:, i] = f
            diag[i] = piv
        else:
            fmat[u, i] = 1.0  # keep the unit diagonal; column otherwise zero
        if collect_state:
            if diag[i] > 0.0:
                state.residual_diag -= diag[i] * fmat[:, i] * fmat[:, i]
            np.maximum(state.residual_diag, 0.0, out=state.residual_diag)
            state.residual_diag[u] = 0.0
            new = np.maximum(diag0 + diag0[u] - 2.0 * col, 0.0)
            np.minimum(state.pointwise, new, out=state.pointwise)
            state.pointwise[u] = 0.0
            state.pivots.append(u)
    factor = PartialCholeskyFactor(order, r, fmat[perm, :], diag)
    return (factor, state) if collect_state else factor


def choose_pivots(oracle, chooser: PivotChooser, r: int, collect_state=False):
    """Select ``r`` pivots with the given rule and build the factor alongside.

    Returns ``(order, factor)`` where the order lists the selected pivots in
    selection sequence followed by the unselected indices in ascending order.
    All-zero sampling weights stop selection early with the pivots found so
    far (the factor's rank is then the achieved count).
    """
    n = oracle.n
    if not 0 <= r <= n:
        raise ValueError("rank must satisfy 0 <= r <= n")
    if chooser.variant == "fixed":
        out = build_partial_cholesky(oracle, chooser.order, r, collect_state)
        factor = out[0] if collect_state else out
        return (chooser.order, factor, out[1]) if collect_state else (chooser.order, factor)
    if chooser.variant == "adaptive":
        return _choose_adaptive(oracle, chooser, r, collect_state)

    rng = np.random.default_rng(chooser.seed)
    diag0 = np.maximum(oracle.diagonal(), 0.0)
    trace0 = float(diag0.sum())
    resid = diag0.copy()
    pointwise = diag0.copy()
    cols = np.zeros((n, r))
    diag = np.zeros(r)
    pivots: list[int] = []
    for step in range(r):
        eligible = resid > INELIGIBLE * trace0
        eligible[pivots] = False
        u = _select(chooser.variant, rng, resid, pointwise, eligible)
        if u is None:
            break
        col = oracle.column(u)
        v = col - cols[:, :step] @ (diag[:step] * cols[u, :step]) if step else col.astype(float)
        piv = float(v[u])
        if piv <= 0.0:
            break
        f = v / piv
        f[pivots] = 0.0
        f[u] = 1.0
        cols[:, step] = f
        diag[step] = piv
        resid -= piv * f * f
        np.maximum(resid, 0.0, out=resid)
        resid[u] = 0.0
        np.minimum(pointwise, np.maximum(diag0 + diag0[u] - 2.0 * col, 0.0), out=pointwise)
        pointwise[u] = 0.0
        pivots.append(u)
    k = len(pivots)
    order = PivotOrder.from_pivots(pivots, n)
    factor = PartialCholeskyFactor(order, k, cols[order.perm, :k], diag[:k])
    if collect_state:
        return order, factor, DistanceState(resid, pointwise, pivots)
    return order, factor


def _select(variant, rng, resid, pointwise, eligible):
    if not np.any(eligible):
        return None
    if variant == "rpc":
        w = np.where(eligible, resid, 0.0)
        total = w.sum()
        if total <= 0.0:
            return None
        return int(rng.choice(w.size, p=w / total))
    if variant == "sds":
        w = np.where(eligible, pointwise, 0.0)
        total = w.sum()
        if total <= 0.0:
            return None
        return int(rng.choice(w.size, p=w / total))
    scores = resid if variant == "cpc" else pointwise
    masked = np.where(eligible, scores, -np.inf)
    best = masked.max()
    if not np.isfinite(best):
        return None
    # uniform tie-breaking among numerically exact maxima
    ties = np.flatnonzero(masked == best)
    return int(ties[0] if ties.size == 1 else rng.choice(ties))


def _choose_adaptive(oracle, chooser, r, collect_state):
    """Greedy minimization of the Cholesky+diagonal Kaporin condition number.

    Requires materializing the matrix. For the current residual E and
    candidate j, the change in log kappa is
    ``sum_i log(1 - E(i,j)^2 / (E(i,i) E(j,j)))`` over the still-active rows,
    so each stage costs O(n^2). The ``exhaustive`` flag recomputes the
    objective from scratch per candidate through the determinant identity.
    """
    n = oracle.n
    a = oracle.sym_block(np.arange(n))
    resid = a.copy()
    diag0 = np.maximum(np.diag(a), 0.0)
    trace0 = float(diag0.sum())
    pointwise = diag0.copy()
    cols = np.zeros((n, r))
    diag = np.zeros(r)
    pivots: list[int] = []
    for step in range(r):
        d = np.diag(resid).copy()
        active = d > INELIGIBLE * trace0
        active[pivots] = False
        if not np.any(active):
            break
        if chooser.exhaustive:
            deltas = np.full(n, np.inf)
            for j in np.flatnonzero(active):
                deltas[j] = pc_diag_log_kappa(a, pivots + [int(j)])
        else:
            dd = np.where(active, d, 1.0)
            rho2 = resid**2 / np.outer(dd, dd)
            rho2 = np.clip(rho2, 0.0, 1.0 - 1e-15)
            terms = np.where(active[:, None], np.log1p(-rho2), 0.0)
            deltas = np.where(active, terms.sum(axis=0) - np.diag(terms), np.inf)
        u = int(np.argmin(deltas))  # ties break toward the lowest index
        piv = float(resid[u, u])
        if piv <= 0.0:
            break
        f = resid[:, u] / piv
        f[pivots] = 0.0
        f[u] = 1.0
        cols[:, step] = f
        diag[step] = piv
        resid = resid - piv * np.outer(f, f)
        np.minimum(pointwise, np.maximum(diag0 + diag0[u] - 2.0 * a[:, u], 0.0), out=pointwise)
        pointwise[u] = 0.0
        pivots.append(u)
    k = len(pivots)
    order = PivotOrder.from_pivots(pivots, n)
    factor = PartialCholeskyFactor(order, k, cols[order.perm, :k], diag[:k])
    if collect_state:
        state = DistanceState(np.maximum(np.diag(resid), 0.0), pointwise, pivots)
        return order, factor, state
    return order, factor


def pc_diag_log_kappa(a: np.ndarray, pivots) -> float:
    """log Kaporin condition number of the Cholesky+diagonal approximation.

    Uses ``log det A(R,R) + sum_{i not in R} log E(i,i) - log det A`` where E
    is the residual after pivoting on R; valid for strictly positive-definite
    dense input (brute-force verification helper).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    pivots = list(int(p) for p in pivots)
    rest = [i for i in range(n) if i not in pivots]
    sign, logdet_a = np.linalg.slogdet(a)
    if sign <= 0:
        raise ValueError("expected a positive-definite matrix")
    total = -logdet_a
    if pivots:
        sub = a[np.ix_(pivots, pivots)]
        sign, val = np.linalg.slogdet(sub)
        if sign <= 0:
            raise ValueError("pivot block is singular")
        total += val
        block = a[np.ix_(rest, pivots)]
        schur = a[np.ix_(rest, rest)] - block @ np.linalg.solve(sub, block.T)
        total += float(np.sum(np.log(np.diag(schur))))
    else:
        total += float(np.sum(np.log(np.diag(a))))
    return max(total, 0.0)


def eta_objectives(oracle, subset):
    """The four pivot-quality functionals of a pivot set.

    Returns ``(eta_rpc, eta_sds, eta_cpc, eta_fps)``: summed squared span
    distances, summed squared pointwise distances, and the corresponding
    maxima taken as unsquared distances.
    """
    subset = np.unique(np.asarray(subset, dtype=np.intp).reshape(-1))
    n = oracle.n
    span_sq = np.zeros(n)
    point_sq = np.zeros(n)
    diag = oracle.diagonal()
    for i in range(n):
        if np.any(subset == i):
            continue
        if subset.size == 0:
            span_sq[i] = max(float(diag[i]), 0.0)
            point_sq[i] = max(float(diag[i]), 0.0)
            continue
        span_sq[i] = weighted_distance_sq(oracle, i, subset)
        cross = oracle.vector(i, subset)
        point_sq[i] = max(float(np.min(diag[i] - 2.0 * cross + diag[subset])), 0.0)
    return (
        float(span_sq.sum()),
        float(point_sq.sum()),
        float(np.sqrt(span_sq.max())),
        float(np.sqrt(point_sq.max())),
    )


def verify_fps_ratio(oracle, r: int, seed: int = 0, brute_limit: int = 12) -> float:
    """Farthest-point-sampling objective vs. the exhaustive optimum.

    Runs the FPS chooser, then enumerates all size-r subsets to find the best
    possible objective. Both objectives zero counts as an exact ratio of 1.
    """
    n = oracle.n
    if n > brute_limit:
        raise ValueError(f"brute-force enumeration limited to n <= {brute_limit}")
    if not 1 <= r <= n:
        raise ValueError("need 1 <= r <= n")
    order, factor = choose_pivots(oracle, PivotChooser.fps(seed), r)
    achieved = eta_objectives(oracle, order.perm[:factor.rank])[3]
    best = np.inf
    for subset in combinations(range(n), r):
        best = min(best, eta_objectives(oracle, subset)[3])
    tiny = 1e-14 * float(np.sqrt(max(np.max(oracle.diagonal()), 0.0)))
    if best <= tiny:
        return 1.0 if achieved <= tiny else np.inf
    return achieved / best

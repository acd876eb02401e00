"""Kaporin condition number: spectral definition and factor-based product form.

The spectral route works from dense matrices: it compares ranges through
spectral projectors, then computes the positive eigenvalues of ``A Ahat^+``
restricted to the shared range. The factor route reads numerators off the
approximation's diagonal and takes exact denominators from a full LDL^T
factorization of the permuted target. Both accumulate in the log domain; the
product over rows would overflow long before n gets interesting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import smallsym
from .core import PermutedOracle, VecchiaFactor

#: relative eigenvalue cutoff separating range from nullspace
RANGE_CUTOFF = 1e-10
#: spectral-norm tolerance for declaring two ranges equal
PROJECTOR_TOL = 1e-8


@dataclass
class KaporinReport:
    """Log condition number plus the quantities its error bounds consume."""

    log_kappa: float
    rank: int
    trace_ratio: float | None = None
    per_row_log_terms: np.ndarray | None = None
    excluded_rows: np.ndarray | None = None
    relative_to_reference: bool = False

    @property
    def infinite(self) -> bool:
        return math.isinf(self.log_kappa)


def kappa_from_dense(a: np.ndarray, a_hat: np.ndarray,
                     range_cutoff: float = RANGE_CUTOFF,
                     projector_tol: float = PROJECTOR_TOL) -> KaporinReport:
    """Condition number from eigendecompositions of the two dense matrices.

    Returns the infinite flag when the ranges differ (rank mismatch or
    spectral projectors further apart than ``projector_tol``).
    """
    a = np.asarray(a, dtype=float)
    a_hat = np.asarray(a_hat, dtype=float)
    wa, va = np.linalg.eigh(0.5 * (a + a.T))
    wh, vh = np.linalg.eigh(0.5 * (a_hat + a_hat.T))
    keep_a = wa > range_cutoff * max(wa[-1], 0.0)
    keep_h = wh > range_cutoff * max(wh[-1], 0.0)
    rank = int(np.count_nonzero(keep_a))
    if rank != int(np.count_nonzero(keep_h)):
        return KaporinReport(math.inf, rank)
    if rank == 0:
        return KaporinReport(0.0, 0, trace_ratio=1.0)
    qa = va[:, keep_a]
    qh = vh[:, keep_h]
    gap = np.linalg.norm(qa @ qa.T - qh @ qh.T, ord=2)
    if gap > projector_tol:
        return KaporinReport(math.inf, rank)
    # eigenvalues of A Ahat^+ on the shared range, via the symmetric pencil
    a_r = qa.T @ a @ qa
    h_r = qa.T @ a_hat @ qa
    wr, vr = np.linalg.eigh(0.5 * (h_r + h_r.T))
    inv_half = vr @ np.diag(1.0 / np.sqrt(wr)) @ vr.T
    lam = np.linalg.eigvalsh(inv_half @ a_r @ inv_half)
    lam = np.maximum(lam, np.finfo(float).tiny)
    mean = float(np.mean(lam))
    log_kappa = rank * math.log(mean) - float(np.sum(np.log(lam)))
    return KaporinReport(log_kappa, rank, trace_ratio=mean)


def exact_prefix_distances(oracle, order, cutoff: float = smallsym.EIG_CUTOFF):
    """Squared distances ``d(e_i, span{e_j : j < i})^2`` in permuted coordinates.

    Materializes the permuted matrix and reads the distances off a full
    LDL^T factorization; intended for moderate n.
    """
    view = PermutedOracle(oracle, order)
    at = view.sym_block(np.arange(oracle.n))
    _, d = smallsym.ldlt_psd(at, cutoff=cutoff)
    return d


def kappa_from_factor(oracle, factor: VecchiaFactor, dense_limit: int = 600,
                      reference: VecchiaFactor | None = None) -> KaporinReport:
    """Condition number of a Vecchia factor via the per-row ratio product.

    Numerators come from the factor's diagonal. Denominators are the exact
    full-history distances, computed densely up to ``dense_limit``; beyond
    that a reference factor must supply them, and the report is flagged as
    relative to that reference.

    Rows whose exact distance vanishes are excluded from the product; if the
    factor keeps a positive diagonal on such a row (or drops a row the target
    needs), the ranges cannot match and the infinite flag is returned.
    """
    n = oracle.n
    relative = False
    if n <= dense_limit:
        denom = exact_prefix_distances(oracle, factor.order)
    elif reference is not None:
        if not np.array_equal(reference.order.perm, factor.order.perm):
            raise ValueError("reference factor must share the pivot order")
        denom = reference.diag.copy()
        relative = True
    else:
        raise ValueError(
            f"n={n} exceeds dense_limit={dense_limit}; supply a reference factor"
        )
    num = factor.diag
    dscale = float(np.max(denom, initial=0.0))
    nscale = float(np.max(num, initial=0.0))
    good = denom > smallsym.EIG_CUTOFF * dscale
    bad = ~good
    rank = int(np.count_nonzero(good))
    excluded = np.flatnonzero(bad)
    if np.any(num[bad] > smallsym.EIG_CUTOFF * nscale):
        return KaporinReport(math.inf, rank, excluded_rows=excluded)
    if np.any(num[good] <= smallsym.EIG_CUTOFF * nscale):
        return KaporinReport(math.inf, rank, excluded_rows=excluded)
    terms = np.zeros(n)
    terms[good] = np.log(num[good]) - np.log(denom[good])
    log_kappa = float(np.sum(terms[good]))
    trace_ratio = _trace_ratio(oracle, factor, good) if not relative else None
    return KaporinReport(
        log_kappa,
        rank,
        trace_ratio=trace_ratio,
        per_row_log_terms=terms,
        excluded_rows=excluded,
        relative_to_reference=relative,
    )


def _trace_ratio(oracle, factor, good):
    """``tr(A Ahat^+) / rank`` evaluated row by row as (C At C^T)(i,i) / d_i."""
    view = PermutedOracle(oracle, factor.order)
    total = 0.0
    for i in np.flatnonzero(good):
        s = factor.pattern.sets[i]
        row = factor.rows[i]
        alpha = view.entry(i, i)
        if s.size:
            m = view.sym_block(s)
            v = view.vector(i, s)
            quad = alpha + 2.0 * float(row @ v) + float(row @ m @ row)
        else:
            quad = alpha
        total += quad / factor.diag[i]
    count = int(np.count_nonzero(good))
    return total / count if count else 1.0


def kaporin_error_bounds(report: KaporinReport, t: int):
    """Error-bound values implied by the condition number at step count t.

    Returns ``(direct_solve, pcg_at_t, det_identity, stochastic_det_at_t)``:
    the squared A-norm ratio bound ``2 rank log(kappa)`` for the one-shot
    corrected solve, the squared PCG ratio bound ``(3 log(kappa) / t)^t``,
    the exact log-determinant offset ``log(kappa)``, and the mean-square
    bound ``8 log(kappa) / t`` for the stochastic estimator with real-valued
    probe vectors.
    """
    if report.infinite:
        raise ValueError("bounds require a finite condition number")
    if t < 1:
        raise ValueError("t must be positive")
    lk = max(report.log_kappa, 0.0)
    return (
        2.0 * report.rank * lk,
        (3.0 * lk / t) ** t,
        lk,
        8.0 * lk / t,
    )

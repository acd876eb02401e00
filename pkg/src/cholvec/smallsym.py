"""Dense symmetric eigensolvers, pseudoinverse solves, and LDL factorization.

Every semidefinite solve in the package funnels through :func:`pseudo_solve`,
which applies a relative eigenvalue cutoff: eigenvalues at or below
``cutoff * lambda_max`` count as exact zeros, so singular systems receive the
minimum-norm solution.

:func:`jacobi_eigh` is a self-contained cyclic-Jacobi eigensolver kept as a
reference implementation. The default path delegates to LAPACK through
``numpy.linalg.eigh`` (the verification batteries call these routines tens of
thousands of times, which a pure-Python sweep loop cannot sustain); the test
suite cross-checks the two implementations against each other.
"""

from __future__ import annotations

import numpy as np

# Relative eigenvalue cutoff used by all pseudoinverse applications.
EIG_CUTOFF = 1e-12

# Set True to route eigh_sym through the in-module Jacobi solver everywhere.
FORCE_JACOBI = False


def jacobi_eigh(a: np.ndarray, max_sweeps: int = 60, tol: float = 1e-15):
    """Eigendecomposition of a real symmetric matrix via cyclic Jacobi sweeps.

    Returns (w, V) with eigenvalues ascending and eigenvectors in columns,
    matching the ``numpy.linalg.eigh`` convention.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    if n <= 1:
        return a.reshape(-1).copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        skip = tol * scale / n
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(tau) + np.sqrt(tau * tau + 1.0))
                if tau < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def eigh_sym(a: np.ndarray):
    """Symmetric eigendecomposition (ascending), LAPACK-backed by default."""
    if FORCE_JACOBI:
        return jacobi_eigh(a)
    return np.linalg.eigh(a)


def pseudo_solve(a: np.ndarray, b: np.ndarray, cutoff: float = EIG_CUTOFF) -> np.ndarray:
    """Minimum-norm solution of the symmetric PSD system ``a x = b``.

    Eigenvalues at or below ``cutoff * lambda_max`` are treated as zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros_like(b)
    w, v = eigh_sym(a)
    wmax = max(w[-1], 0.0)
    keep = w > cutoff * wmax
    if not np.any(keep):
        return np.zeros_like(b)
    vk = v[:, keep]
    return vk @ ((vk.T @ b) / w[keep])


def pseudo_quadratic(a: np.ndarray, b: np.ndarray, cutoff: float = EIG_CUTOFF) -> float:
    """Nonnegative quadratic form ``b^T a^+ b`` for symmetric PSD ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    w, v = eigh_sym(a)
    wmax = max(w[-1], 0.0)
    keep = w > cutoff * wmax
    if not np.any(keep):
        return 0.0
    coeffs = v[:, keep].T @ b
    return float(np.sum(coeffs * coeffs / w[keep]))


def ldlt_psd(a: np.ndarray, cutoff: float = EIG_CUTOFF):
    """Unit-lower LDL^T factorization of a symmetric PSD matrix.

    Pivots at or below ``cutoff * max_diagonal`` are treated as exact zeros;
    for a PSD input the corresponding Schur-complement row and column vanish,
    so the column of L is left as a standard basis vector and no update runs.
    Returns (L, d) with ``a ~= L @ diag(d) @ L.T``.
    """
    work = np.array(a, dtype=float)
    n = work.shape[0]
    lower = np.eye(n)
    d = np.zeros(n)
    scale = float(np.max(np.diag(work), initial=0.0))
    if scale <= 0.0:
        return lower, d
    for k in range(n):
        piv = work[k, k]
        if piv <= cutoff * scale:
            continue
        d[k] = piv
        if k + 1 < n:
            col = work[k + 1 :, k] / piv
            lower[k + 1 :, k] = col
            work[k + 1 :, k + 1 :] -= np.outer(col, work[k + 1 :, k])
    return lower, d

"""Preconditioned solvers and log-determinant estimators.

PCG follows the classic recurrences: one operator product and one
preconditioner solve per iteration, Fletcher-Reeves-style beta from the
preconditioned residual inner products, termination on the tracked relative
residual. Passing ``x_star`` switches on diagnostic A-norm error tracking,
which costs one extra operator product per iteration and exists for the
error-bound checks.

The stochastic log-determinant estimator never forms ``Ahat^{-1/2}``; the
factored form supplies the symmetric operator

    M = D^{-1/2} C At C^T D^{-1/2},

which shares its spectrum with ``Ahat^{-1} A`` (both are similar to it), so
quadratic forms of ``log M`` under rotation-invariant probes are distributed
identically to the textbook estimator. Each probe runs Lanczos with full
reorthogonalization and evaluates the projected logarithm by
eigendecomposition; exhausting the Krylov space early just truncates the
basis, which is exact on the probe's invariant subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import smallsym
from .core import PartialCholeskyFactor, VecchiaFactor
from .errors import Breakdown, NonSPDFactor
from .vecchia import logdet_direct

#: curvature denominators at or below BREAKDOWN_TOL * scale abort PCG
BREAKDOWN_TOL = 1e-14


def _as_solver(preconditioner):
    if callable(preconditioner):
        return preconditioner
    return preconditioner.solve


@dataclass
class PcgTrace:
    """Iteration history of one PCG run."""

    x: np.ndarray
    iterations: int
    residual_norms: list
    termination: str
    a_errors: list | None = None
    iterates: list | None = None


def direct_solve(a_matvec, factor, b, x0=None):
    """One-shot corrected solve ``x0 + Ahat^+ (b - A x0)``.

    With the default zero initial guess the operator is never applied, so the
    cost is a single factored solve.
    """
    solve = _as_solver(factor)
    b = np.asarray(b, dtype=float)
    if x0 is None:
        return solve(b)
    x0 = np.asarray(x0, dtype=float)
    return x0 + solve(b - a_matvec(x0))


def pcg(a_matvec, preconditioner, b, tol=1e-8, max_iter=None, x0=None,
        x_star=None, record_iterates=False):
    """Preconditioned conjugate gradient for a PSD operator.

    Stops once the tracked residual satisfies ``||r|| <= tol * ||b||`` or the
    iteration limit is hit. Raises :class:`Breakdown` on a nonpositive
    curvature denominator. A zero right-hand side returns the initial guess
    at iteration zero.
    """
    solve = _as_solver(preconditioner)
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    bnorm = float(np.linalg.norm(b))
    trace = PcgTrace(x, 0, [], "tol")
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=float)
        trace.a_errors = []
    if record_iterates:
        trace.iterates = [x.copy()]
    if bnorm == 0.0:
        trace.termination = "zero_rhs"
        return trace
    r = b - a_matvec(x) if np.any(x) else b.copy()
    rnorm = float(np.linalg.norm(r))
    trace.residual_norms.append(rnorm)

    def record_error(xc):
        if trace.a_errors is not None:
            e = xc - x_star
            trace.a_errors.append(math.sqrt(max(float(e @ a_matvec(e)), 0.0)))

    record_error(x)
    if rnorm <= tol * bnorm:
        return trace
    z = solve(r)
    rz = float(r @ z)
    d = z
    for t in range(1, max_iter + 1):
        ad = a_matvec(d)
        dad = float(d @ ad)
        # curvature scale: |d^T A d| <= ||d|| * ||A d||, with equality only
        # along eigenvectors; a vanishing ratio means zero or negative
        # curvature along d rather than a merely small step
        scale = float(np.linalg.norm(d) * np.linalg.norm(ad))
        if scale == 0.0:
            trace.termination = "stagnation"
            return trace
        if dad <= BREAKDOWN_TOL * scale:
            raise Breakdown(
                f"nonpositive curvature d^T A d = {dad:.3e} at iteration {t}"
            )
        alpha = rz / dad
        x = x + alpha * d
        r = r - alpha * ad
        rnorm = float(np.linalg.norm(r))
        trace.x = x
        trace.iterations = t
        trace.residual_norms.append(rnorm)
        if record_iterates:
            trace.iterates.append(x.copy())
        record_error(x)
        if rnorm <= tol * bnorm:
            trace.termination = "tol"
            return trace
        z = solve(r)
        rz_next = float(r @ z)
        if rz_next <= 0.0:
            # residual has left the solvable subspace; nothing left to gain
            trace.termination = "stagnation"
            return trace
        d = z + (rz_next / rz) * d
        rz = rz_next
    trace.termination = "max_iter"
    return trace


def lanczos_quadratic_form(apply_op, u, depth, breakdown_tol=1e-12):
    """Krylov-Ritz approximation of ``u^T log(M) u`` for a symmetric PD operator.

    Builds an orthonormal Lanczos basis with full reorthogonalization (twice
    per step) and evaluates the logarithm of the projected tridiagonal matrix
    by eigendecomposition. Returns ``(value, achieved_depth)``; the basis may
    exhaust early, which is exact rather than an error.
    """
    u = np.asarray(u, dtype=float)
    if depth < 1:
        raise ValueError("depth must be positive")
    unorm = float(np.linalg.norm(u))
    if unorm == 0.0:
        return 0.0, 0
    n = u.size
    qmat = np.empty((depth, n))
    qmat[0] = u / unorm
    w = apply_op(qmat[0])
    alphas = [float(qmat[0] @ w)]
    betas: list[float] = []
    w = w - alphas[0] * qmat[0]
    scale = max(abs(alphas[0]), float(np.linalg.norm(w)))
    for k in range(1, depth):
        held = qmat[:k]
        w -= held.T @ (held @ w)
        w -= held.T @ (held @ w)
        beta = float(np.linalg.norm(w))
        if beta <= breakdown_tol * scale:
            break
        qmat[k] = w / beta
        betas.append(beta)
        w = apply_op(qmat[k]) - beta * qmat[k - 1]
        a = float(qmat[k] @ w)
        alphas.append(a)
        w = w - a * qmat[k]
        scale = max(scale, abs(a), beta)
    k = len(alphas)
    tri = np.diag(alphas)
    if k > 1:
        off = np.array(betas)
        tri += np.diag(off, 1) + np.diag(off, -1)
    theta, vecs = np.linalg.eigh(tri)
    floor = np.finfo(float).eps * max(float(theta[-1]), 0.0)
    if floor <= 0.0:
        raise NonSPDFactor("projected operator is not positive definite")
    theta = np.maximum(theta, floor)
    weights = vecs[0, :] ** 2
    return unorm**2 * float(weights @ np.log(theta)), k


@dataclass
class LogdetEstimate:
    """Stochastic correction plus the factor's direct log-determinant."""

    sample_values: np.ndarray
    t: int
    depth: int
    direct: float
    s_t: float = field(init=False)
    estimate: float = field(init=False)

    def __post_init__(self):
        self.s_t = float(np.mean(self.sample_values)) if self.t else 0.0
        self.estimate = self.s_t + self.direct


def preconditioned_log_operator(a_matvec, factor: VecchiaFactor):
    """The symmetric operator ``D^-1/2 C At C^T D^-1/2`` as a matvec closure."""
    d = factor.diag
    cut = smallsym.EIG_CUTOFF * float(np.max(d, initial=0.0))
    if np.any(d <= cut):
        raise NonSPDFactor("stochastic estimation requires a positive diagonal")
    inv_half = 1.0 / np.sqrt(d)
    perm = factor.order.perm
    n = factor.n

    def apply_m(w):
        y = factor.apply_ct(inv_half * w)
        z = np.empty(n)
        z[perm] = y
        z = a_matvec(z)
        return inv_half * factor.apply_c(z[perm])

    return apply_m


def logdet_stochastic(a_matvec, factor: VecchiaFactor, t: int, depth: int,
                      seed: int = 0) -> LogdetEstimate:
    """Stochastic log-determinant estimate with Krylov-Ritz quadratic forms.

    Draws ``t`` independent probes of length sqrt(n) with uniformly random
    direction (per-sample child seeds, so the draw order is reproducible and
    parallel-safe) and averages the quadratic forms of the logarithm of the
    preconditioned operator at the given Krylov depth.
    """
    if t < 1:
        raise ValueError("t must be positive")
    if depth < 2:
        raise ValueError("depth must be at least 2")
    direct = logdet_direct(factor)
    apply_m = preconditioned_log_operator(a_matvec, factor)
    n = factor.n
    children = np.random.SeedSequence(seed).spawn(t)
    values = np.empty(t)
    for i in range(t):
        rng = np.random.default_rng(children[i])
        omega = rng.standard_normal(n)
        u = omega * (math.sqrt(n) / float(np.linalg.norm(omega)))
        values[i], _ = lanczos_quadratic_form(apply_m, u, min(depth, n))
    return LogdetEstimate(values, t, depth, direct)


class EigenShiftPreconditioner:
    """Preconditioner ``U diag(evals + mu) U^T + (shift + mu) (I - U U^T)``.

    Covers the two published ways of completing a rank-r kernel approximation
    into a full-rank preconditioner: filling the orthogonal complement with
    the r-th eigenvalue (spectral-floor style) or with the ridge alone. The
    complement term uses the orthogonal projector ``U U^T``.
    """

    def __init__(self, basis: np.ndarray, evals: np.ndarray, shift: float, mu: float):
        if shift + mu <= 0.0:
            raise NonSPDFactor("complement fill shift + mu must be positive")
        if np.any(evals + mu <= 0.0):
            raise NonSPDFactor("shifted eigenvalues must be positive")
        self.basis = basis
        self.evals = evals
        self.shift = float(shift)
        self.mu = float(mu)

    @classmethod
    def from_partial(cls, factor: PartialCholeskyFactor, mu: float,
                     spectral_floor: bool):
        """Eigendecompose the rank-r factor; fill the complement per style."""
        f = factor.original_rows() * np.sqrt(factor.diag)
        gram = f.T @ f
        w, v = np.linalg.eigh(gram)
        w = np.maximum(w, 0.0)
        keep = w > smallsym.EIG_CUTOFF * float(np.max(w, initial=0.0))
        basis = np.zeros((factor.n, int(np.count_nonzero(keep))))
        if np.any(keep):
            basis = f @ (v[:, keep] / np.sqrt(w[keep]))
        evals = w[keep]
        # lambda_r of the rank-r approximation: its smallest retained
        # eigenvalue when full rank is reached, zero otherwise
        lam_r = float(evals.min()) if evals.size == factor.rank else 0.0
        shift = lam_r if spectral_floor else 0.0
        return cls(basis, evals, shift, mu)

    def solve(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        coeffs = self.basis.T @ v
        inside = self.basis @ (coeffs / (self.evals + self.mu))
        outside = (v - self.basis @ coeffs) / (self.shift + self.mu)
        return inside + outside


def frangella_preconditioner(factor: PartialCholeskyFactor, mu: float):
    """Rank-r approximation of the kernel block, complement filled to its r-th
    eigenvalue, plus the ridge."""
    return EigenShiftPreconditioner.from_partial(factor, mu, spectral_floor=True)


def diaz_preconditioner(factor: PartialCholeskyFactor, mu: float):
    """Rank-r approximation of the kernel block plus the ridge alone."""
    return EigenShiftPreconditioner.from_partial(factor, mu, spectral_floor=False)

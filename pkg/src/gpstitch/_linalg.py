"""Shared dense linear algebra with a single jitter policy.

All positive definite factorizations in the package go through chol_psd so
the near-singular retry rule lives in one place: if the plain Cholesky fails
and the smallest eigenvalue is above -1e-12 relative to the mean diagonal,
retry once with 1e-10 * (trace/dim) added to the diagonal; otherwise raise.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NotPositiveDefiniteError
from .instrument import note_dim

__all__ = [
    "chol_psd",
    "solve_chol",
    "solve_lower",
    "logdet_chol",
    "gauss_logpdf_chol",
    "LOG_2PI",
]

LOG_2PI = math.log(2.0 * math.pi)


def chol_psd(A, what="matrix"):
    """Lower Cholesky factor of A under the package jitter policy."""
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    note_dim(k)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.trace(A)) / k if k else 1.0
    lam_min = float(np.linalg.eigvalsh(A)[0]) if k else 0.0
    if lam_min > -1e-12 * max(abs(scale), 1e-300):
        jitter = 1e-10 * abs(scale)
        try:
            return np.linalg.cholesky(A + jitter * np.eye(k))
        except np.linalg.LinAlgError:
            pass
    raise NotPositiveDefiniteError(
        "%s of dimension %d is not positive definite (min eigenvalue %.3e)"
        % (what, k, lam_min)
    )


def solve_chol(L, B):
    """A^{-1} B given the lower Cholesky factor L of A."""
    return cho_solve((L, True), np.asarray(B, dtype=float))


def solve_lower(L, B):
    """L^{-1} B for lower-triangular L."""
    return solve_triangular(L, np.asarray(B, dtype=float), lower=True)


def logdet_chol(L):
    """log det A given the lower Cholesky factor L of A."""
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gauss_logpdf_chol(x, L):
    """Zero-mean Gaussian log-density with covariance LL^T.

    x may be a vector (k,) or a batch (k, R); batches return one value per
    column.
    """
    x = np.asarray(x, dtype=float)
    k = L.shape[0]
    z = solve_lower(L, x)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (k * LOG_2PI + logdet_chol(L)) - 0.5 * quad
    if x.ndim == 1:
        return float(out)
    return out

"""Matrix kernels shared by both solvers."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg


class SVDResult(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # largest-magnitude entry of each left singular vector is made nonnegative
    if U.size == 0:
        return
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    V *= signs


def svd(a: np.ndarray, full_matrices: bool = False) -> SVDResult:
    """SVD with a deterministic sign convention.

    Falls back from the divide-and-conquer driver to ``gesvd`` when the
    former fails to converge.
    """
    a = np.asarray(a, dtype=float)
    try:
        U, S, Vh = scipy.linalg.svd(a, full_matrices=full_matrices, check_finite=False,
                                    lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        U, S, Vh = scipy.linalg.svd(a, full_matrices=full_matrices, check_finite=False,
                                    lapack_driver="gesvd")
    V = Vh.T.copy()
    U = U.copy()
    _fix_signs(U, V)
    return SVDResult(U, S, V)


def singular_values(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(0)
    return scipy.linalg.svdvals(a, check_finite=False)


def svt(a: np.ndarray, tau: float) -> np.ndarray:
    r"""Singular value thresholding, the proximal map of ``tau * ||.||_*``.

    Returns ``U max(S - tau, 0) V^T``.
    """
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    a = np.asarray(a, dtype=float)
    if tau == 0:
        return a.copy()
    U, S, V = svd(a)
    keep = S > tau
    if not np.any(keep):
        return np.zeros_like(a)
    return (U[:, keep] * (S[keep] - tau)) @ V[:, keep].T


def nuclear_norm(a: np.ndarray) -> float:
    return float(np.sum(singular_values(a)))


def spectral_norm(a: np.ndarray) -> float:
    s = singular_values(a)
    return float(s[0]) if s.size else 0.0


def numerical_rank(a: np.ndarray, tol: float = 1e-8) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    s = singular_values(a)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def procrustes(m: np.ndarray) -> np.ndarray:
    """Maximizer of ``trace(U^T m)`` over ``d x R`` matrices with orthonormal columns.

    For rank-deficient `m` the completion of the singular bases follows
    the deterministic sign convention of :func:`svd`.
    """
    m = np.asarray(m, dtype=float)
    d, R = m.shape
    if d < R:
        raise ValueError(f"procrustes needs rows >= columns, got {m.shape}")
    U, _, V = svd(m)
    return U @ V.T

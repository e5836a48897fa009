"""Randomized and deterministic singular value decompositions.

The randomized path sketches the range of ``A`` with a Gaussian test matrix,
orthonormalizes the sketch and takes an exact SVD of the small projected
matrix. There are no power iterations and, by default, no oversampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LowRankSvd",
    "min_rank_percent",
    "sample_count",
    "gaussian_test_matrix",
    "rsvd",
    "full_svd",
    "reconstruction_error",
]


@dataclass(frozen=True)
class LowRankSvd:
    """Thin factorization ``A ~ U diag(S) V^T``.

    ``seed`` is ``None`` for the deterministic factorization.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank_k: int
    seed: Optional[int] = None

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T

    def truncate(self, k: int) -> "LowRankSvd":
        return LowRankSvd(self.U[:, :k], self.S[:k], self.V[:, :k], k, self.seed)


def min_rank_percent(T: int) -> float:
    """Advisory minimum RSVD rank, as a percentage of the Toeplitz side ``T``."""
    if T < 1:
        raise ValueError("Toeplitz side must be >= 1")
    return max(30.0 - 0.00156 * T, 25.0)


def sample_count(percent: float, T: int) -> int:
    """Number of sampled columns for a percentage rank, clamped to ``[1, T]``."""
    if not 0 < percent <= 100:
        raise ValueError(f"percent must lie in (0, 100], got {percent}")
    # round away float noise before ceil so exact products (25 % of 11400) stay exact
    k = math.ceil(round(percent * T / 100.0, 9))
    return min(max(k, 1), T)


def _check_finite(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    return A


def gaussian_test_matrix(n: int, k: int, seed: int) -> np.ndarray:
    """Standard-normal ``n x k`` matrix from a counter-based (Philox) stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.standard_normal((n, k))


def rsvd(A, k: int, seed: int, oversample: int = 0) -> LowRankSvd:
    """Randomized SVD of rank ``k``.

    Parameters
    ----------
    A : ndarray, shape (m, n)
    k : int
        Target rank, ``1 <= k <= min(m, n)``.
    seed : int
        Seed of the Gaussian test matrix. Same ``(A, k, seed)`` gives the same
        bytes on one platform.
    oversample : int
        Extra sketch columns, discarded after the small SVD. Default 0.
    """
    A = _check_finite(A)
    m, n = A.shape
    k = int(k)
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank k={k} outside 1..{min(m, n)}")
    width = min(k + int(oversample), min(m, n))
    omega = gaussian_test_matrix(n, width, seed)
    Y = A @ omega
    Q, _ = sla.qr(Y, mode="economic", check_finite=False)
    P = Q.T @ A
    Ut, S, Vt = sla.svd(P, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    U = Q @ Ut[:, :k]
    return LowRankSvd(U, S[:k], Vt[:k].T, k, int(seed))


def full_svd(A) -> LowRankSvd:
    """Deterministic economy SVD, ``k = min(m, n)``."""
    A = _check_finite(A)
    U, S, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    return LowRankSvd(U, S, Vt.T, len(S), None)


def reconstruction_error(A, f: LowRankSvd) -> float:
    """Relative Frobenius error ``||A - U S V^T|| / ||A||`` (0 for zero ``A``)."""
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(A - f.reconstruct()) / norm)

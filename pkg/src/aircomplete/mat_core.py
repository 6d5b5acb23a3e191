"""Dense matrix kernels, SVD with a fixed sign convention, and seeded randomness.

Matrices are numpy float64 arrays in C (row-major) order throughout the
package. The random generator is PCG64, which produces identical streams
for identical seeds on every platform numpy supports.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput

__all__ = [
    "SvdResult",
    "make_rng",
    "svd",
    "gaussian_matrix",
    "matmul",
    "transpose",
    "elementwise_exp",
    "hadamard",
    "trace",
    "fro_norm",
    "row_sums",
    "as_matrix",
    "finite_difference_grad",
]


class SvdResult(NamedTuple):
    """Thin SVD X = U diag(S) V^T with S descending and k = min(m, n)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64). Same seed, same stream, every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Validate and return a finite 2-d float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return a


def svd(X) -> SvdResult:
    """Thin SVD with deterministic singular-vector signs.

    Signs are fixed so the largest-magnitude entry of each column of U is
    positive; V columns are flipped together with U. This keeps metric
    traces comparable across runs.

    Parameters
    ----------
    X : array_like, shape (m, n)
        Finite real matrix, min(m, n) >= 1.

    Returns
    -------
    SvdResult
        U (m, k), S (k,) descending, V (n, k).
    """
    A = as_matrix(X, "svd input")
    if min(A.shape) < 1:
        raise InvalidInput("svd requires min(m, n) >= 1")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    V = Vt.T
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    return SvdResult(U, S, V)


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int,
                    mean: float = 0.0, variance: float = 1.0) -> np.ndarray:
    """I.i.d. normal entries with the given mean and variance."""
    if variance < 0:
        raise InvalidInput(f"variance must be nonnegative, got {variance}")
    return rng.normal(mean, np.sqrt(variance), size=(rows, cols))


# Plumbing kernels. These carry the standard algebraic contracts and exist
# so callers have one audited vocabulary for the identities tested in the
# suite; internally they defer to numpy.

def matmul(A, B) -> np.ndarray:
    return np.asarray(A) @ np.asarray(B)


def transpose(A) -> np.ndarray:
    return np.asarray(A).T


def elementwise_exp(A) -> np.ndarray:
    return np.exp(np.asarray(A))


def hadamard(A, B) -> np.ndarray:
    return np.asarray(A) * np.asarray(B)


def trace(A) -> float:
    return float(np.trace(np.asarray(A)))


def fro_norm(A) -> float:
    return float(np.linalg.norm(np.asarray(A)))


def row_sums(A) -> np.ndarray:
    return np.asarray(A).sum(axis=1)


def finite_difference_grad(f, X, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    O(m*n) evaluations of f; meant for verification, not training.
    """
    X = np.asarray(X, dtype=np.float64)
    G = np.empty_like(X)
    for idx in np.ndindex(*X.shape):
        Xp = X.copy()
        Xm = X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (f(Xp) - f(Xm)) / (2.0 * h)
    return G

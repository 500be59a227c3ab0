"""Dense linear-algebra and distribution kernels shared by all estimators.

Everything here is a pure function of its inputs. Design matrices are plain
2-d float ndarrays; symmetric matrices are square ndarrays (only the lower
triangle is trusted where symmetry matters).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
from scipy.stats import chi2 as _chi2

from .errors import DomainError, EmptyInputError, RankDeficientError

__all__ = [
    "solve_least_squares",
    "generalized_inverse",
    "symmetric_pinv",
    "chi_square_sf",
    "normal_sf",
    "percentile",
    "require_finite",
]


def require_finite(arr, name: str = "array") -> np.ndarray:
    """Return ``arr`` as a float ndarray, rejecting NaN/Inf entries."""
    out = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def solve_least_squares(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Minimize ||y - X b|| by pivoted QR.

    Parameters
    ----------
    X : (n, k) array
    y : (n,) array

    Returns
    -------
    beta : (k,) array
    residuals : (n,) array, y - X beta

    Raises
    ------
    RankDeficientError
        If a pivot of R falls below ``max(n, k) * eps * max_col_norm``. The
        exception carries the original column index of the offending pivot.
    """
    X = require_finite(X, "X")
    y = require_finite(y, "y")
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if n < k:
        raise ValueError(f"underdetermined system: {n} rows < {k} columns")

    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    col_norms = np.linalg.norm(X, axis=0)
    tol = max(n, k) * np.finfo(float).eps * (col_norms.max() if k else 0.0)
    diag = np.abs(np.diag(R))
    small = np.flatnonzero(diag <= tol)
    if small.size:
        raise RankDeficientError(int(piv[small[0]]))

    qty = Q.T @ y
    beta_piv = scipy.linalg.solve_triangular(R, qty)
    beta = np.empty(k)
    beta[piv] = beta_piv
    residuals = y - X @ beta
    return beta, residuals


def symmetric_pinv(A) -> tuple[np.ndarray, int]:
    """Moore-Penrose inverse and rank of a symmetric matrix.

    Eigenvalues below ``order * eps * max|eigenvalue|`` are treated as zero,
    so the result is defined for singular and indefinite inputs alike.
    """
    A = require_finite(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    # Symmetrize to guard against round-off asymmetry from upstream products.
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    cutoff = A.shape[0] * np.finfo(float).eps * (np.abs(w).max() if w.size else 0.0)
    keep = np.abs(w) > cutoff
    inv_w = np.where(keep, 1.0 / np.where(w == 0.0, 1.0, w), 0.0)
    return (V * inv_w) @ V.T, int(keep.sum())


def generalized_inverse(A) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix via eigendecomposition.

    Equals the ordinary inverse when A is nonsingular.
    """
    return symmetric_pinv(A)[0]


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability P(chi2_df > x)."""
    if not math.isfinite(x):
        raise DomainError(f"x must be finite, got {x}")
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    if df < 1:
        raise DomainError(f"df must be >= 1, got {df}")
    return float(_chi2.sf(x, df))


def normal_sf(z: float) -> float:
    """Upper-tail probability P(N(0,1) > z), accurate in both tails."""
    if not math.isfinite(z):
        raise DomainError(f"z must be finite, got {z}")
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile (closest-ranks convention).

    ``percentile(v, 0)`` is the minimum and ``percentile(v, 100)`` the
    maximum; interior values interpolate at rank ``(n - 1) * p / 100``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInputError("percentile of empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("values contain non-finite entries")
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"p must be in [0, 100], got {p}")
    return float(np.percentile(v, p))

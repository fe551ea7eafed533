"""Dense symmetric linear algebra used as the exact reference path.

Matrices are plain ``float64`` NumPy arrays.  :func:`symmetric` validates
and freezes an input; everything else in the package works on those arrays.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

DEFAULT_RTOL = 1e-10


class LinalgError(ArithmeticError):
    pass


class NotPositiveDefinite(LinalgError):
    """Raised when a Cholesky pivot is not strictly positive."""


class NoConvergence(LinalgError):
    pass


class AsymmetricInput(ValueError):
    pass


def symmetric(a, *, copy: bool = True) -> np.ndarray:
    """Return ``a`` as a read-only symmetric float64 matrix.

    Symmetry is required bit-for-bit; callers that assemble matrices from
    rounded arithmetic should symmetrize first.
    """
    arr = np.array(a, dtype=np.float64, copy=copy)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {arr.shape}")
    if not np.array_equal(arr, arr.T):
        raise AsymmetricInput("matrix is not exactly symmetric")
    arr.setflags(write=False)
    return arr


def spectral_norm(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``S = L L^T``.

    Inverses are never formed; use the triangular solves.
    """

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b``."""
        return scipy.linalg.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def solve_upper(self, b: np.ndarray) -> np.ndarray:
        """``L^{-T} b``."""
        return scipy.linalg.solve_triangular(
            self.lower, b, lower=True, trans="T", check_finite=False
        )

    def matvec(self, b: np.ndarray) -> np.ndarray:
        """``L b``."""
        return self.lower @ b

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def congruence(self, H: np.ndarray) -> np.ndarray:
        """``L^{-1} H L^{-T}``, symmetrized to remove rounding asymmetry."""
        X = self.solve_lower(H)
        X = self.solve_lower(X.T)
        return 0.5 * (X + X.T)


def cholesky(S) -> CholeskyFactor:
    S = np.asarray(S, dtype=np.float64)
    try:
        lower = scipy.linalg.cholesky(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if not np.all(np.diag(lower) > 0.0):
        raise NotPositiveDefinite("non-positive pivot")
    lower.setflags(write=False)
    return CholeskyFactor(lower)


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def eig_sym(A, *, rtol: float = DEFAULT_RTOL) -> EigenDecomposition:
    """Symmetric eigendecomposition with a residual check.

    LAPACK ``syevd`` (Householder tridiagonalization followed by a
    divide-and-conquer / implicit QL solve).  Raises :class:`NoConvergence`
    when the solver fails or the residual exceeds ``rtol * ||A||_2``.
    """
    A = np.asarray(A, dtype=np.float64)
    try:
        w, Q = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    resid = np.linalg.norm(A @ Q - Q * w, axis=0)
    if np.any(resid > rtol * scale):
        raise NoConvergence(f"eigen residual {resid.max():.3e} exceeds tolerance")
    return EigenDecomposition(w, Q)


def matrix_function(A, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Dense ``f(A) = Q f(Lambda) Q^T``."""
    w, Q = eig_sym(A)
    return (Q * f(w)) @ Q.T


def apply_matrix_function(A, f: Callable[[np.ndarray], np.ndarray], v) -> np.ndarray:
    w, Q = eig_sym(A)
    return Q @ (f(w) * (Q.T @ np.asarray(v, dtype=np.float64)))

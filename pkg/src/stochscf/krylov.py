"""Lanczos / Krylov approximation of ``f(A) v`` and the Chebyshev reference.

The Krylov path returns ``||v|| V f(T) e1`` built from an ``ell``-step
Lanczos recursion with full reorthogonalization.  The Chebyshev path is a
Clenshaw evaluation of a fixed-degree expansion on a spectral interval and
is kept for comparison with the Krylov path.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels

BREAKDOWN_RTOL = 1e-13


class ZeroStartVector(ValueError):
    pass


class IntervalTooSmall(ValueError):
    pass


class DegenerateSpectrum(ValueError):
    pass


@dataclass(frozen=True)
class LanczosResult:
    v_norm: float
    alpha: np.ndarray
    beta: np.ndarray
    basis: np.ndarray  # M x k, orthonormal columns
    requested: int

    @property
    def steps_taken(self) -> int:
        return self.alpha.shape[0]

    @property
    def tridiag(self) -> np.ndarray:
        T = np.diag(self.alpha)
        if self.beta.size:
            T += np.diag(self.beta, 1) + np.diag(self.beta, -1)
        return T


def _norm_bound(A: np.ndarray) -> float:
    # infinity norm bounds the 2-norm of a symmetric matrix from above
    return float(np.max(np.sum(np.abs(A), axis=1)))


def lanczos(A, v, ell: int, *, anorm: Optional[float] = None) -> LanczosResult:
    """Run ``ell`` Lanczos steps on symmetric ``A`` from ``v``.

    Stops early when an off-diagonal coefficient falls below
    ``1e-13 * anorm`` (an invariant subspace was found).  ``anorm``
    defaults to the infinity norm of ``A``.
    """
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m = A.shape[0]
    if not 1 <= ell <= m:
        raise ValueError(f"ell must lie in [1, {m}], got {ell}")
    if not np.any(v):
        raise ZeroStartVector("Lanczos start vector is zero")
    if anorm is None:
        anorm = _norm_bound(A)
    norm_v, alpha, beta, V = _kernels.lanczos_tridiag(A, v, ell, BREAKDOWN_RTOL * anorm)
    return LanczosResult(norm_v, alpha, beta, V.T, ell)


def tridiag_function_e1(alpha, beta, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``f(T) e1`` for the symmetric tridiagonal ``T`` (via its eigenpairs)."""
    evals, U = _kernels.tridiag_eigh(alpha, beta)
    return U @ (f(evals) * U[0])


def krylov_apply_f(A, v, ell: int, f, *, anorm: Optional[float] = None) -> np.ndarray:
    res = lanczos(A, v, ell, anorm=anorm)
    y = tridiag_function_e1(res.alpha, res.beta, f)
    return res.v_norm * (res.basis @ y)


@dataclass(frozen=True)
class ChebyshevApprox:
    """``p(x) = sum_n c_n T_n(t(x))`` with ``t`` mapping ``[a, b]`` to ``[-1, 1]``."""

    coefficients: np.ndarray
    interval: tuple

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    def _to_unit(self, x):
        a, b = self.interval
        return (2.0 * np.asarray(x, dtype=np.float64) - (a + b)) / (b - a)

    def __call__(self, x):
        t = self._to_unit(x)
        c = self.coefficients
        b1 = np.zeros_like(t)
        b2 = np.zeros_like(t)
        for ck in c[:0:-1]:
            b1, b2 = ck + 2.0 * t * b1 - b2, b1
        return c[0] + t * b1 - b2

    def nodes(self, n: Optional[int] = None) -> np.ndarray:
        n = self.degree + 1 if n is None else n
        a, b = self.interval
        theta = np.pi * (np.arange(n) + 0.5) / n
        return 0.5 * (b - a) * np.cos(theta) + 0.5 * (a + b)


def chebyshev_fit(f, interval, degree: int, *, oversample: int = 4) -> ChebyshevApprox:
    """Chebyshev coefficients of ``f`` on ``interval`` up to ``degree``.

    Coefficients come from Gauss-Chebyshev quadrature on
    ``oversample * (degree + 1)`` nodes (at least 64), so they approximate the
    truncated series rather than the degree-``degree`` interpolant.
    """
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise DegenerateSpectrum("interval must satisfy b > a")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n = max(oversample * (degree + 1), 64)
    theta = np.pi * (np.arange(n) + 0.5) / n
    fx = np.asarray(f(0.5 * (b - a) * np.cos(theta) + 0.5 * (a + b)), dtype=np.float64)
    k = np.arange(degree + 1)
    c = (2.0 / n) * (np.cos(np.outer(k, theta)) @ fx)
    c[0] *= 0.5
    return ChebyshevApprox(c, (a, b))


def chebyshev_apply(approx: ChebyshevApprox, A, v, *, check_interval: bool = True) -> np.ndarray:
    """Clenshaw evaluation of ``p(A) v``; ``p(A)`` itself is never formed."""
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    a, b = approx.interval
    if check_interval:
        ev = np.linalg.eigvalsh(A)
        slack = 1e-12 * (b - a)
        if ev[0] < a - slack or ev[-1] > b + slack:
            raise IntervalTooSmall(
                f"spectrum [{ev[0]:.6g}, {ev[-1]:.6g}] leaves interval [{a:.6g}, {b:.6g}]"
            )
    scale, shift = 2.0 / (b - a), (a + b) / (b - a)

    def At(x):
        return scale * (A @ x) - shift * x

    c = approx.coefficients
    b1 = np.zeros_like(v)
    b2 = np.zeros_like(v)
    for ck in c[:0:-1]:
        b1, b2 = ck * v + 2.0 * At(b1) - b2, b1
    return c[0] * v + At(b1) - b2


def bernstein_rho(lambda_min: float, lambda_max: float, beta: float) -> float:
    """Bernstein-ellipse parameter for the Fermi-Dirac function.

    Solves ``rho - 1/rho = c`` with ``c = 4 pi / (beta (lambda_max - lambda_min))``
    (``k_B T = 1/beta``), i.e. ``rho = (c + sqrt(c^2 + 4)) / 2``.
    """
    width = lambda_max - lambda_min
    if not width > 0:
        raise DegenerateSpectrum("lambda_max must exceed lambda_min")
    if not beta > 0:
        raise ValueError("beta must be positive")
    c = 4.0 * math.pi / (beta * width)
    return rho_from_c(c)


def rho_from_c(c: float) -> float:
    return 0.5 * (c + math.sqrt(c * c + 4.0))

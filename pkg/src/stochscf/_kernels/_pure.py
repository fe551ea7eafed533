"""NumPy implementations of the inner kernels.

These are the reference versions; the compiled module mirrors their
signatures exactly and is checked against them in the test suite.
"""

import numpy as np
from scipy.linalg import eigh_tridiagonal


def lanczos_tridiag(A, w, ell, breakdown_tol):
    """Lanczos recursion with full reorthogonalization.

    Returns ``(norm_w, alpha, beta, V)`` where ``V`` holds the basis
    vectors as rows (``k x M``), ``alpha`` the ``k`` diagonal entries and
    ``beta`` the ``k - 1`` off-diagonal entries.  The recursion stops early
    once an off-diagonal entry drops below ``breakdown_tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = w.shape[0]
    norm_w = float(np.linalg.norm(w))
    V = np.empty((ell, m))
    alpha = np.empty(ell)
    beta = np.empty(max(ell - 1, 0))
    V[0] = w / norm_w
    k = ell
    for j in range(ell):
        r = A @ V[j]
        alpha[j] = V[j] @ r
        r -= alpha[j] * V[j]
        if j > 0:
            r -= beta[j - 1] * V[j - 1]
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            r -= V[: j + 1].T @ (V[: j + 1] @ r)
        if j == ell - 1:
            break
        b = float(np.linalg.norm(r))
        if b < breakdown_tol:
            k = j + 1
            break
        beta[j] = b
        V[j + 1] = r / b
    return norm_w, alpha[:k].copy(), beta[: k - 1].copy(), V[:k].copy()


def tridiag_eigh(alpha, beta):
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape[0] == 1:
        return alpha.copy(), np.ones((1, 1))
    return eigh_tridiagonal(alpha, beta)


def block_sums(x, offsets):
    x = np.asarray(x, dtype=np.float64)
    return np.add.reduceat(x, np.asarray(offsets[:-1], dtype=np.intp))


def fermi_dirac(x, mu, beta):
    z = beta * (np.asarray(x, dtype=np.float64) - mu)
    out = np.empty_like(z)
    hi = z >= 0
    e = np.exp(-z[hi])
    out[hi] = 2.0 * e / (1.0 + e)
    out[~hi] = 2.0 / (1.0 + np.exp(z[~hi]))
    return out

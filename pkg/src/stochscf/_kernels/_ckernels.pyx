# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels (Lanczos, tridiagonal eig, block sums, occupations).

Signatures match ``_pure`` one for one.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemv, ddot, dnrm2
from scipy.linalg.cython_lapack cimport dstevd

cnp.import_array()


def lanczos_tridiag(A, w, Py_ssize_t ell, double breakdown_tol):
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int m = <int>wv.shape[0]
    cdef int one = 1
    cdef int jp1
    cdef double d_one = 1.0, d_zero = 0.0, d_mone = -1.0
    cdef char trans_n = b'N'
    cdef char trans_t = b'T'

    V_arr = np.empty((ell, m), dtype=np.float64)
    alpha_arr = np.empty(ell, dtype=np.float64)
    beta_arr = np.empty(max(ell - 1, 0), dtype=np.float64)
    r_arr = np.empty(m, dtype=np.float64)
    c_arr = np.empty(ell, dtype=np.float64)
    cdef double[:, ::1] V = V_arr
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] beta = beta_arr
    cdef double[::1] r = r_arr
    cdef double[::1] coef = c_arr

    cdef double norm_w = dnrm2(&m, <double*>&wv[0], &one)
    cdef double inv, b, aj
    cdef Py_ssize_t i, j, k = ell
    cdef int p

    inv = 1.0 / norm_w
    for i in range(m):
        V[0, i] = wv[i] * inv

    for j in range(ell):
        # r = A v_j  (A symmetric, so the row-major buffer is its own transpose)
        dgemv(&trans_n, &m, &m, &d_one, <double*>&a[0, 0], &m, &V[j, 0], &one,
              &d_zero, &r[0], &one)
        aj = ddot(&m, &V[j, 0], &one, &r[0], &one)
        alpha[j] = aj
        if j > 0:
            for i in range(m):
                r[i] -= aj * V[j, i] + beta[j - 1] * V[j - 1, i]
        else:
            for i in range(m):
                r[i] -= aj * V[j, i]
        jp1 = <int>(j + 1)
        for p in range(2):
            # coef = V[:j+1] r ; r -= V[:j+1]^T coef
            dgemv(&trans_t, &m, &jp1, &d_one, &V[0, 0], &m, &r[0], &one,
                  &d_zero, &coef[0], &one)
            dgemv(&trans_n, &m, &jp1, &d_mone, &V[0, 0], &m, &coef[0], &one,
                  &d_one, &r[0], &one)
        if j == ell - 1:
            break
        b = dnrm2(&m, &r[0], &one)
        if b < breakdown_tol:
            k = j + 1
            break
        beta[j] = b
        inv = 1.0 / b
        for i in range(m):
            V[j + 1, i] = r[i] * inv

    return (norm_w, alpha_arr[:k].copy(), beta_arr[:k - 1].copy(),
            V_arr[:k].copy())


def tridiag_eigh(alpha, beta):
    cdef double[::1] d = np.array(alpha, dtype=np.float64)
    cdef int n = <int>d.shape[0]
    if n == 1:
        return np.asarray(d).copy(), np.ones((1, 1))
    cdef double[::1] e = np.array(beta, dtype=np.float64)
    z_arr = np.empty((n, n), dtype=np.float64, order="F")
    cdef double[::1, :] z = z_arr
    # divide and conquer; workspace sizes for jobz='V'
    cdef int lwork = 1 + 4 * n + n * n
    cdef int liwork = 3 + 5 * n
    cdef double[::1] work = np.empty(lwork, dtype=np.float64)
    cdef int[::1] iwork = np.empty(liwork, dtype=np.intc)
    cdef int info = 0
    cdef char jobz = b'V'
    dstevd(&jobz, &n, &d[0], &e[0], &z[0, 0], &n, &work[0], &lwork, &iwork[0], &liwork, &info)
    if info != 0:
        raise np.linalg.LinAlgError("dstevd failed with info=%d" % info)
    return np.asarray(d).copy(), z_arr


def block_sums(x, offsets):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const cnp.intp_t[::1] off = np.ascontiguousarray(offsets, dtype=np.intp)
    cdef Py_ssize_t n = off.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t j, mu
    cdef double s
    for j in range(n):
        s = 0.0
        for mu in range(off[j], off[j + 1]):
            s += xv[mu]
        out[j] = s
    return out_arr


def fermi_dirac(x, double mu, double beta):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double z, e
    for i in range(n):
        z = beta * (xv[i] - mu)
        if z >= 0:
            e = exp(-z)
            out[i] = 2.0 * e / (1.0 + e)
        else:
            out[i] = 2.0 / (1.0 + exp(z))
    return out_arr.reshape(np.shape(x))

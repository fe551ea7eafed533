"""Compiled and pure kernels must agree."""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochscf import _kernels
from stochscf._kernels import _pure

try:
    from stochscf._kernels import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def _sym(rng, n):
    X = rng.standard_normal((n, n))
    return (X + X.T) / 2


@needs_ext
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_lanczos_parity(n, seed):
    rng = np.random.default_rng(seed)
    A = _sym(rng, n)
    w = rng.standard_normal(n)
    ell = int(rng.integers(1, n + 1))
    tol = 1e-13 * np.abs(A).sum(axis=1).max()
    p = _pure.lanczos_tridiag(A, w, ell, tol)
    c = _ckernels.lanczos_tridiag(A, w, ell, tol)
    assert p[0] == pytest.approx(c[0], rel=1e-14)
    assert p[1].shape == c[1].shape
    np.testing.assert_allclose(c[1], p[1], atol=1e-10)
    np.testing.assert_allclose(c[2], p[2], atol=1e-10)
    np.testing.assert_allclose(c[3], p[3], atol=1e-8)


@needs_ext
def test_tridiag_parity(rng):
    for k in (1, 2, 7, 20):
        a = rng.standard_normal(k)
        b = rng.uniform(0.1, 1, k - 1)
        wp, Up = _pure.tridiag_eigh(a, b)
        wc, Uc = _ckernels.tridiag_eigh(a, b)
        np.testing.assert_allclose(wc, wp, atol=1e-12)
        # eigenvectors agree up to sign
        np.testing.assert_allclose(np.abs(Uc.T @ Up), np.eye(k), atol=1e-8)


@needs_ext
def test_block_sums_and_fermi_parity(rng):
    x = rng.standard_normal(17)
    off = np.array([0, 3, 4, 10, 17])
    np.testing.assert_allclose(_ckernels.block_sums(x, off), _pure.block_sums(x, off), atol=1e-14)
    xs = np.array([-1e4, -3.0, 0.0, 0.2, 5.0, 1e4])
    np.testing.assert_allclose(_ckernels.fermi_dirac(xs, 0.1, 40.0), _pure.fermi_dirac(xs, 0.1, 40.0), rtol=1e-14)


def test_block_sums_readonly_input():
    x = np.arange(6, dtype=float)
    off = np.array([0, 2, 6])
    x.setflags(write=False)
    off.setflags(write=False)
    np.testing.assert_array_equal(_kernels.block_sums(x, off), [1.0, 14.0])


def test_fermi_no_overflow():
    vals = _kernels.fermi_dirac(np.array([-1e308, 1e308]), 0.0, 1e3)
    assert np.all(np.isfinite(vals))
    np.testing.assert_array_equal(vals, [2.0, 0.0])


def test_pure_backend_selected_by_env():
    code = "import stochscf._kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"STOCHSCF_PURE": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

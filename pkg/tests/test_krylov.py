import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochscf import krylov

from . import oracles


def _sym(rng, n):
    X = rng.standard_normal((n, n))
    return (X + X.T) / (2 * math.sqrt(n))


@given(st.integers(2, 25), st.integers(0, 10_000))
def test_lanczos_relations(n, seed):
    rng = np.random.default_rng(seed)
    A = _sym(rng, n)
    v = rng.standard_normal(n)
    ell = int(rng.integers(1, n + 1))
    res = krylov.lanczos(A, v, ell)
    V = res.basis
    k = res.steps_taken
    assert 1 <= k <= ell
    np.testing.assert_allclose(V.T @ V, np.eye(k), atol=1e-10)
    np.testing.assert_allclose(V.T @ A @ V, res.tridiag, atol=1e-10)
    np.testing.assert_allclose(V[:, 0] * res.v_norm, v, atol=1e-10)


def test_lanczos_breakdown_on_invariant_subspace():
    A = np.diag([1.0, 2.0, 3.0, 4.0])
    v = np.array([1.0, 1.0, 0.0, 0.0])
    res = krylov.lanczos(A, v, 4)
    assert res.steps_taken == 2
    f = np.exp
    np.testing.assert_allclose(krylov.krylov_apply_f(A, v, 4, f), np.exp(np.diag(A)) * v, atol=1e-12)


def test_lanczos_argument_errors():
    A = np.eye(3)
    with pytest.raises(krylov.ZeroStartVector):
        krylov.lanczos(A, np.zeros(3), 2)
    with pytest.raises(ValueError):
        krylov.lanczos(A, np.ones(3), 4)
    with pytest.raises(ValueError):
        krylov.lanczos(A, np.ones(3), 0)


def test_identity_matrix_one_step():
    v = np.array([3.0, 4.0])
    out = krylov.krylov_apply_f(np.eye(2), v, 2, lambda x: 2 * x)
    np.testing.assert_allclose(out, 2 * v, atol=1e-14)


def test_polynomial_exactness(rng):
    A = _sym(rng, 30)
    v = rng.standard_normal(30)
    for deg in range(6):
        c = rng.standard_normal(deg + 1)
        got = krylov.krylov_apply_f(A, v, deg + 1, lambda x: np.polyval(c, x))
        np.testing.assert_allclose(got, oracles.dense_fA_v(A, lambda x: np.polyval(c, x), v), atol=1e-10)


def test_chebyshev_fit_and_apply(rng):
    A = _sym(rng, 20)
    ev = np.linalg.eigvalsh(A)
    f = lambda x: oracles.fermi(x, 0.0, 4.0)  # noqa: E731
    approx = krylov.chebyshev_fit(f, (ev[0] - 0.1, ev[-1] + 0.1), 60)
    xs = np.linspace(ev[0], ev[-1], 50)
    np.testing.assert_allclose(approx(xs), f(xs), atol=1e-10)
    v = rng.standard_normal(20)
    np.testing.assert_allclose(krylov.chebyshev_apply(approx, A, v), oracles.dense_fA_v(A, f, v), atol=1e-9)
    with pytest.raises(krylov.IntervalTooSmall):
        krylov.chebyshev_apply(krylov.chebyshev_fit(f, (0.0, 0.1), 4), A, v)


def test_chebyshev_low_degree_exact():
    approx = krylov.chebyshev_fit(lambda x: 3 * x**2 - 1, (-2.0, 5.0), 2)
    xs = np.linspace(-2, 5, 11)
    np.testing.assert_allclose(approx(xs), 3 * xs**2 - 1, atol=1e-12)
    assert approx.degree == 2
    with pytest.raises(krylov.DegenerateSpectrum):
        krylov.chebyshev_fit(np.sin, (1.0, 1.0), 3)


def test_bernstein_rho():
    # rho - 1/rho = c
    rho = krylov.bernstein_rho(-1.0, 1.0, 2.0)
    c = 4 * math.pi / (2.0 * 2.0)
    assert rho - 1 / rho == pytest.approx(c)
    assert krylov.rho_from_c(0.0) == 1.0
    with pytest.raises(krylov.DegenerateSpectrum):
        krylov.bernstein_rho(1.0, 1.0, 1.0)


def test_error_decays_with_ell(rng):
    A = _sym(rng, 80)
    v = rng.standard_normal(80)
    f = lambda x: oracles.fermi(x, 0.0, 3.0)  # noqa: E731
    ref = oracles.dense_fA_v(A, f, v)
    errs = [np.linalg.norm(krylov.krylov_apply_f(A, v, ell, f) - ref) for ell in (4, 8, 16, 24)]
    assert all(b < a for a, b in zip(errs, errs[1:]))

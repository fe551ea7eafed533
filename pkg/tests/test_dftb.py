import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochscf import dftb
from stochscf.estimator import RngStream, enumerate_rademacher
from stochscf.matkit import cholesky

from . import oracles


def test_fermi_dirac_values():
    assert dftb.fermi_dirac(0.3, 0.3, 10.0) == pytest.approx(1.0)
    assert isinstance(dftb.fermi_dirac(0.0, 0.0, 1.0), float)
    np.testing.assert_allclose(dftb.fermi_dirac(np.array([-50.0, 50.0]), 0.0, 10.0), [2.0, 0.0], atol=1e-200)


def test_partition():
    p = dftb.OrbitalPartition((1, 3, 2))
    assert p.atom_count == 3 and p.total_orbitals == 6
    np.testing.assert_array_equal(p.offsets, [0, 1, 4, 6])
    np.testing.assert_array_equal(p.expand([1.0, 2.0, 3.0]), [1, 2, 2, 2, 3, 3])
    np.testing.assert_array_equal(p.block_sums(np.arange(6.0)), [0, 6, 9])
    with pytest.raises(ValueError):
        dftb.OrbitalPartition((1, 0))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=6), st.integers(0, 10_000))
def test_charge_exact_matches_orbital_sum(counts, seed):
    rng = np.random.default_rng(seed)
    s = dftb.random_system(rng, tuple(counts))
    q = s.q0 + rng.uniform(-0.3, 0.3, s.atom_count)
    got = dftb.charge_exact(s, cholesky(s.S), q)
    H = oracles.hamiltonian(s.H0, s.S, s.gamma, s.q0, q, s.partition.offsets)
    want = oracles.orbital_sum_charges(H, s.S, s.partition.offsets, s.mu, s.beta)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_build_A_matches_hamiltonian_route(multi_orbital_system, rng):
    s = multi_orbital_system
    q = s.q0 + rng.uniform(-0.5, 0.5, s.atom_count)
    L = cholesky(s.S)
    np.testing.assert_allclose(dftb.build_A(s, L, q), L.congruence(s.hamiltonian(q)), atol=1e-12)
    np.testing.assert_allclose(dftb.build_A(s, L, s.q0), L.congruence(s.H0), atol=1e-13)


def test_electron_count_identity(small_system):
    s = small_system
    model = dftb.SCCModel(s)
    q = s.q0 * 0.9
    A = model.build_A(q)
    w = np.linalg.eigvalsh(A)
    assert model.charge_exact(q).sum() == pytest.approx(s.occupation(w).sum(), abs=1e-10)


def test_sample_full_subspace_unbiased(multi_orbital_system):
    s = multi_orbital_system
    L = cholesky(s.S)
    q = s.q0 + 0.1
    M = s.orbital_count
    A = dftb.build_A(s, L, q)
    mean = np.mean([dftb.charge_sample(s, L, q, M, v, A=A) for v in enumerate_rademacher(M)], axis=0)
    np.testing.assert_allclose(mean, dftb.charge_exact(s, L, q), atol=1e-11)


def test_problem_sampling_deterministic(small_system):
    prob = dftb.DFTBProblem(dftb.SCCModel(small_system), ell=4)
    q = small_system.q0
    a = prob.sample_eval(q, RngStream(3, 10), n_vec=2)
    b = prob.sample_eval(q, RngStream(3, 10), n_vec=2)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (small_system.atom_count,)


def test_length_mismatch(small_system):
    with pytest.raises(dftb.LengthMismatch):
        small_system.delta_q(np.zeros(3))


def test_system_validation():
    part = dftb.OrbitalPartition((1, 1))
    with pytest.raises(dftb.InvalidSystem):
        dftb.TightBindingSystem(part, np.eye(2), np.eye(2), -np.eye(2), [1.0, -1.0], 0.0, 1.0)
    with pytest.raises(dftb.InvalidSystem):
        dftb.TightBindingSystem(part, [[0, 1], [2, 0]], np.eye(2), -np.eye(2), [1.0, 1.0], 0.0, 1.0)
    with pytest.raises(dftb.InvalidSystem):
        dftb.TightBindingSystem(part, np.eye(2), np.eye(2), -np.eye(3), [1.0, 1.0], 0.0, 1.0)


def test_generator_deterministic_and_neighbours():
    a = dftb.generate_synthetic(dftb.SyntheticSpec(atoms=12, seed=4, disorder=0.1))
    b = dftb.generate_synthetic(dftb.SyntheticSpec(atoms=12, seed=4, disorder=0.1))
    np.testing.assert_array_equal(a.H0, b.H0)
    adj = (a.S - np.eye(12)) != 0
    assert adj.sum(axis=1).max() <= 3  # honeycomb coordination
    chain = dftb.generate_synthetic(dftb.SyntheticSpec(lattice="chain", atoms=5))
    assert ((chain.S - np.eye(5)) != 0).sum() == 8


def test_generator_rejects_large_overlap():
    with pytest.raises(dftb.OverlapNotSPD):
        dftb.generate_synthetic(dftb.SyntheticSpec(atoms=16, overlap=0.9))


def test_generated_system_is_screening():
    s = dftb.generate_synthetic(dftb.SyntheticSpec(atoms=8, seed=0))
    prob = dftb.DFTBProblem(dftb.SCCModel(s), 8)
    q = s.q0.copy()
    h = 1e-4
    J = np.column_stack([(prob.exact_eval(q + h * e) - prob.exact_eval(q - h * e)) / (2 * h) for e in np.eye(8)])
    assert np.all(np.linalg.eigvals(J).real < 1)


def test_save_load_roundtrip(tmp_path, multi_orbital_system):
    out = dftb.save_system(multi_orbital_system, tmp_path / "sys")
    assert sorted(p.name for p in out.iterdir()) == sorted(dftb.SYSTEM_FILES)
    back = dftb.load_system(out)
    for name in ("H0", "S", "gamma", "q0"):
        np.testing.assert_array_equal(getattr(back, name), getattr(multi_orbital_system, name))
    assert back.partition == multi_orbital_system.partition


def test_load_rejects_indefinite_overlap(tmp_path, small_system):
    out = dftb.save_system(small_system, tmp_path / "sys")
    from stochscf import mmio

    mmio.write_matrix_market(-np.eye(small_system.orbital_count), out / "S.mtx")
    with pytest.raises(dftb.OverlapNotSPD):
        dftb.load_system(out)

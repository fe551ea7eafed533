"""Self-consistent-charge tight-binding model.

Charges are block traces of ``L f(A) L^{-1}`` where ``S = L L^T`` and
``A = L^{-1} H L^{-T}``.  The charge-dependent part of ``A`` is assembled
directly in the orthogonalized basis::

    A(q) = A0 + 1/2 (W + W^T),   W = L^{-1} diag(expand(Gamma dq)) L

with the charge fluctuation taken as ``dq = q0 - q``.  Note the sign: this
is the reverse of the more common ``q - q0``; the synthetic generator
absorbs it into the sign of ``Gamma`` (see :func:`generate_synthetic`).
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .estimator import ProbeDistribution, RngStream, draw_probes
from .krylov import krylov_apply_f
from .matkit import CholeskyFactor, NotPositiveDefinite, cholesky, eig_sym, symmetric
from .mmio import read_matrix_market, write_matrix_market

DEFAULT_SPACING = 1.4203


class LengthMismatch(ValueError):
    pass


class InvalidSystem(ValueError):
    pass


class OverlapNotSPD(InvalidSystem):
    pass


def fermi_dirac(x, mu: float, beta: float):
    """Occupation ``2 / (1 + exp(beta (x - mu)))``, overflow safe."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    out = _kernels.fermi_dirac(x, mu, beta)
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class OrbitalPartition:
    orbital_counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.orbital_counts)
        if not counts or any(c < 1 for c in counts):
            raise ValueError("orbital counts must be positive integers")
        object.__setattr__(self, "orbital_counts", counts)
        offsets = np.zeros(len(counts) + 1, dtype=np.intp)
        np.cumsum(counts, out=offsets[1:])
        offsets.setflags(write=False)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def atom_count(self) -> int:
        return len(self.orbital_counts)

    @property
    def total_orbitals(self) -> int:
        return int(self._offsets[-1])

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    def block(self, j: int) -> slice:
        return slice(int(self._offsets[j]), int(self._offsets[j + 1]))

    def expand(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.atom_count,):
            raise LengthMismatch(f"expected length {self.atom_count}, got {v.shape}")
        return np.repeat(v, self.orbital_counts)

    def block_sums(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.total_orbitals,):
            raise LengthMismatch(f"expected length {self.total_orbitals}, got {x.shape}")
        return _kernels.block_sums(x, self._offsets)


def expand(partition: OrbitalPartition, v) -> np.ndarray:
    """Repeat ``v[j]`` once per orbital of atom ``j``."""
    return partition.expand(v)


@dataclass(frozen=True)
class TightBindingSystem:
    partition: OrbitalPartition
    H0: np.ndarray
    S: np.ndarray
    gamma: np.ndarray
    q0: np.ndarray
    mu: float
    beta: float
    name: str = ""
    generator_spec: Optional[dict] = None

    def __post_init__(self):
        m, n = self.partition.total_orbitals, self.partition.atom_count
        try:
            H0, S, gamma = (symmetric(x) for x in (self.H0, self.S, self.gamma))
        except ValueError as exc:
            raise InvalidSystem(str(exc)) from exc
        if H0.shape != (m, m) or S.shape != (m, m):
            raise InvalidSystem(f"H0 and S must be {m}x{m}")
        if gamma.shape != (n, n):
            raise InvalidSystem(f"gamma must be {n}x{n}")
        q0 = np.array(self.q0, dtype=np.float64)
        if q0.shape != (n,) or np.any(q0 < 0) or not np.all(np.isfinite(q0)):
            raise InvalidSystem("q0 must be a non-negative finite vector of length N")
        q0.setflags(write=False)
        if not self.beta > 0:
            raise InvalidSystem("beta must be positive")
        object.__setattr__(self, "H0", H0)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def atom_count(self) -> int:
        return self.partition.atom_count

    @property
    def orbital_count(self) -> int:
        return self.partition.total_orbitals

    def occupation(self, x):
        return fermi_dirac(x, self.mu, self.beta)

    def delta_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.atom_count,):
            raise LengthMismatch(f"expected {self.atom_count} charges, got {q.shape}")
        return self.q0 - q

    def onsite_shift(self, q) -> np.ndarray:
        """``expand(Gamma (q0 - q))``: per-orbital potential shift."""
        return self.partition.expand(self.gamma @ self.delta_q(q))

    def hamiltonian(self, q) -> np.ndarray:
        """``H0 + H1(q)`` assembled in the non-orthogonal orbital basis."""
        d = self.onsite_shift(q)
        H1 = 0.5 * (d[:, None] * self.S + self.S * d[None, :])
        return self.H0 + H1


def build_A(sys: TightBindingSystem, L: CholeskyFactor, q, *, A0=None) -> np.ndarray:
    if A0 is None:
        A0 = L.congruence(sys.H0)
    d = sys.onsite_shift(q)
    # row scaling, then one triangular solve: W = L^{-1} diag(d) L
    W = L.solve_lower(d[:, None] * L.lower)
    return A0 + 0.5 * (W + W.T)


def charge_exact(sys: TightBindingSystem, L: CholeskyFactor, q, *, A0=None) -> np.ndarray:
    """Exact charge map: block sums of ``diag(L f(A) L^{-1})``."""
    A = build_A(sys, L, q, A0=A0)
    return charges_from_A(sys, L, A)


def charges_from_A(sys: TightBindingSystem, L: CholeskyFactor, A) -> np.ndarray:
    w, Q = eig_sym(A)
    # diag(L Q f(w) Q^T L^{-1}) = sum_i f(w_i) (L Q)_{mu i} (L^{-T} Q)_{mu i}
    left = L.matvec(Q)
    right = L.solve_upper(Q)
    d = (left * right) @ sys.occupation(w)
    return sys.partition.block_sums(d)


def charge_sample(
    sys: TightBindingSystem, L: CholeskyFactor, q, ell: int, probe, *, A=None, A0=None
) -> np.ndarray:
    """One sample of the stochastic charge map for probe vector ``probe``."""
    if A is None:
        A = build_A(sys, L, q, A0=A0)
    return _sample_from_A(sys, L, A, ell, np.asarray(probe, dtype=np.float64))


def _sample_from_A(sys, L, A, ell, probe, anorm=None):
    w = L.solve_lower(probe)
    y = krylov_apply_f(A, w, ell, sys.occupation, anorm=anorm)
    return sys.partition.block_sums(L.matvec(y) * probe)


class SCCModel:
    """A system with its Cholesky factor and ``A0`` cached."""

    def __init__(self, system: TightBindingSystem):
        self.system = system
        try:
            self.L = cholesky(system.S)
        except NotPositiveDefinite as exc:
            raise OverlapNotSPD(f"overlap matrix is not positive definite: {exc}") from exc
        self.A0 = self.L.congruence(system.H0)

    @property
    def dimension(self) -> int:
        return self.system.atom_count

    def build_A(self, q) -> np.ndarray:
        return build_A(self.system, self.L, q, A0=self.A0)

    def charge_exact(self, q) -> np.ndarray:
        return charge_exact(self.system, self.L, q, A0=self.A0)

    def charge_sample(self, q, ell: int, probe) -> np.ndarray:
        return charge_sample(self.system, self.L, q, ell, probe, A0=self.A0)

    def charge_samples(self, q, ell: int, probes) -> np.ndarray:
        """Samples for each row of ``probes`` sharing one assembled ``A``."""
        A = self.build_A(q)
        anorm = float(np.max(np.sum(np.abs(A), axis=1)))
        return np.stack(
            [_sample_from_A(self.system, self.L, A, ell, p, anorm) for p in np.atleast_2d(probes)]
        )


class DFTBProblem:
    """Charge fixed-point problem ``q = K(q)`` with Krylov-sampled evaluations."""

    def __init__(self, model: SCCModel, ell: int = 20, probe_kind: str = "rademacher"):
        self.model = model
        self.ell = min(int(ell), model.system.orbital_count)
        self.dist = ProbeDistribution(model.system.orbital_count, probe_kind)

    @property
    def dimension(self) -> int:
        return self.model.dimension

    def exact_eval(self, q) -> np.ndarray:
        return self.model.charge_exact(q)

    def sample_eval(self, q, stream: RngStream, n_vec: int = 1) -> np.ndarray:
        probes = draw_probes(self.dist, stream, n_vec)
        return self.model.charge_samples(q, self.ell, probes).mean(axis=0)


# --- synthetic systems -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    lattice: str = "honeycomb"
    atoms: int = 16
    orbitals: int = 1
    hopping: float = 1.0
    onsite: float = 0.0
    overlap: float = 0.1
    softening: float = 1.0
    hubbard: float = 20.0
    q0: Optional[float] = None
    mu: Optional[float] = None
    beta: float = 0.15
    spacing: float = DEFAULT_SPACING
    disorder: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.lattice not in ("honeycomb", "chain"):
            raise ValueError(f"unknown lattice {self.lattice!r}")
        if self.atoms < 1 or self.orbitals < 1:
            raise ValueError("atoms and orbitals must be positive")
        if self.overlap < 0:
            raise ValueError("overlap strength must be non-negative")
        if not self.softening > 0:
            raise ValueError("softening must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")


def honeycomb_positions(n: int, spacing: float = DEFAULT_SPACING) -> np.ndarray:
    """First ``n`` sites of a rectangular graphene patch (4-atom cells, armchair along x)."""
    d = spacing
    h = math.sqrt(3.0) / 2.0 * d
    cell = np.array([[0.0, 0.0], [d, 0.0], [1.5 * d, h], [2.5 * d, h]])
    ncell = math.ceil(n / 4)
    nx = max(1, math.ceil(math.sqrt(ncell)))
    ny = math.ceil(ncell / nx)
    sites = [cell + np.array([3.0 * d * ix, 2.0 * h * iy]) for iy in range(ny) for ix in range(nx)]
    return np.concatenate(sites)[:n]


def chain_positions(n: int, spacing: float = DEFAULT_SPACING) -> np.ndarray:
    return np.column_stack([spacing * np.arange(n, dtype=float), np.zeros(n)])


def generate_synthetic(spec: SyntheticSpec) -> TightBindingSystem:
    """Build a deterministic tight-binding system from ``spec``.

    Nearest neighbours (distance within 1% of ``spacing``) get hopping
    ``-t`` and overlap ``s`` between like orbitals.  The interaction matrix
    is the soft-Coulomb kernel ``1/sqrt(r^2 + softening^2)`` with ``hubbard``
    on the diagonal, stored with a negative sign: combined with
    ``dq = q0 - q`` this raises the onsite level of an atom that gains
    electrons, which keeps the charge map screening (Jacobian eigenvalues
    below one).
    """
    n, m = spec.atoms, spec.orbitals
    if spec.lattice == "honeycomb":
        pos = honeycomb_positions(n, spec.spacing)
    else:
        pos = chain_positions(n, spec.spacing)
    r = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    adj = ((r > 0) & (r < 1.01 * spec.spacing)).astype(float)

    rng = np.random.default_rng(spec.seed)
    onsite = spec.onsite + spec.disorder * rng.uniform(-1.0, 1.0, size=n * m)
    eye_m = np.eye(m)
    H0 = np.diag(onsite) - spec.hopping * np.kron(adj, eye_m)
    S = np.eye(n * m) + spec.overlap * np.kron(adj, eye_m)
    H0 = 0.5 * (H0 + H0.T)

    kernel = 1.0 / np.sqrt(r**2 + spec.softening**2)
    np.fill_diagonal(kernel, spec.hubbard)
    gamma = -kernel

    q0 = np.full(n, float(m) if spec.q0 is None else float(spec.q0))
    mu = spec.onsite if spec.mu is None else spec.mu
    system = TightBindingSystem(
        OrbitalPartition((m,) * n),
        H0,
        S,
        gamma,
        q0,
        mu,
        spec.beta,
        name=spec.name or f"{spec.lattice}-{n}",
        generator_spec=asdict(spec),
    )
    try:
        cholesky(system.S)
    except NotPositiveDefinite as exc:
        raise OverlapNotSPD(
            f"overlap strength {spec.overlap} gives an indefinite S; reduce it"
        ) from exc
    return system


# --- system directory format -----------------------------------------------

SYSTEM_FILES = ("H0.mtx", "S.mtx", "gamma.mtx", "system.json")


def save_system(system: TightBindingSystem, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_market(system.H0, directory / "H0.mtx")
    write_matrix_market(system.S, directory / "S.mtx")
    write_matrix_market(system.gamma, directory / "gamma.mtx")
    meta = {
        "name": system.name,
        "orbital_counts": list(system.partition.orbital_counts),
        "q0": [float(x) for x in system.q0],
        "mu": system.mu,
        "beta": system.beta,
    }
    if system.generator_spec is not None:
        meta["generator_spec"] = system.generator_spec
    (directory / "system.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_system(directory) -> TightBindingSystem:
    """Read a system directory and validate it (including ``S`` being SPD)."""
    directory = Path(directory)
    missing = [f for f in SYSTEM_FILES if not (directory / f).is_file()]
    if missing:
        raise InvalidSystem(f"{directory}: missing {', '.join(missing)}")
    try:
        meta = json.loads((directory / "system.json").read_text())
        system = TightBindingSystem(
            OrbitalPartition(tuple(meta["orbital_counts"])),
            read_matrix_market(directory / "H0.mtx"),
            read_matrix_market(directory / "S.mtx"),
            read_matrix_market(directory / "gamma.mtx"),
            np.asarray(meta["q0"], dtype=float),
            meta["mu"],
            meta["beta"],
            name=meta.get("name", ""),
            generator_spec=meta.get("generator_spec"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSystem(f"{directory}: {exc}") from exc
    try:
        cholesky(system.S)
    except NotPositiveDefinite as exc:
        raise OverlapNotSPD(f"{directory}: S is not positive definite") from exc
    return system


def random_system(
    rng: np.random.Generator,
    orbital_counts: Sequence[int],
    *,
    beta: float = 2.0,
    overlap: float = 0.1,
) -> TightBindingSystem:
    """Dense random system (diagonally dominant SPD overlap) for property tests."""
    part = OrbitalPartition(tuple(orbital_counts))
    m, n = part.total_orbitals, part.atom_count
    X = rng.standard_normal((m, m))
    H0 = 0.5 * (X + X.T)
    B = rng.uniform(-1.0, 1.0, (m, m))
    B = 0.5 * (B + B.T)
    np.fill_diagonal(B, 0.0)
    S = np.eye(m) + overlap * B / max(1.0, np.abs(B).sum(axis=1).max())
    G = rng.uniform(0.0, 0.5, (n, n))
    gamma = -(0.5 * (G + G.T) + np.eye(n))
    q0 = rng.uniform(0.5, 1.5, n) * np.asarray(orbital_counts, float)
    return TightBindingSystem(part, H0, S, gamma, q0, float(rng.uniform(-0.5, 0.5)), beta)

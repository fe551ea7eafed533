"""Stability and convergence diagnostics for damped stochastic mixing.

Lyapunov functionals, finite-difference Jacobians, the damping bound
``theta_max``, the companion-matrix equilibrium of linear mixing, exit
probability experiments and iterations-to-epsilon scans.  None of this is
needed by the solver itself.
"""

import functools
import math
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from .estimator import RngStream
from .mixing import (
    DampingSchedule,
    ExactProblem,
    MixingConfig,
    averaging_weights,
    iterate,
    run,
    validate_coefficients,
)

TAIL_TERMS = 1 << 20
XI_SAFETY = 1.5


class DivergentTail(ValueError):
    """The schedule is not square summable, so the Lyapunov tail is infinite."""


class WindowMismatch(ValueError):
    pass


class InvalidCoefficients(ValueError):
    pass


# --- Lyapunov functionals -----------------------------------------------------


@functools.lru_cache(maxsize=4096)
def damping_square_tail(sched: DampingSchedule, n: int) -> float:
    """``sum_{i >= n} a_i^2``.

    Direct summation of ``2**20`` terms (or until a term drops below 1e-16 of
    the partial sum), then a midpoint integral for the remainder.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not sched.square_summable:
        raise DivergentTail("schedule is not square summable (need slope > 0 and exponent > 1/2)")
    idx = np.arange(n, n + TAIL_TERMS, dtype=np.float64)
    sq = sched.values(idx) ** 2
    total = math.fsum(sq)
    small = np.nonzero(sq < 1e-16 * total)[0]
    if small.size:
        return math.fsum(sq[: small[0]]) + _uncapped_square_integral(sched, n + small[0] - 0.5)
    return total + _uncapped_square_integral(sched, n + TAIL_TERMS - 0.5)


def _uncapped_square_integral(sched: DampingSchedule, x0: float) -> float:
    # substitute t = 1/x to integrate over a finite interval
    def f(t):
        if t == 0.0:
            return 0.0
        x = 1.0 / t
        return (sched.a / (sched.offset + sched.slope * x**sched.exponent)) ** 2 * x * x

    val, _ = integrate.quad(f, 0.0, 1.0 / x0, limit=200, epsabs=0.0, epsrel=1e-12)
    return float(val)


def chi_tail(sched: DampingSchedule, b, n: int) -> float:
    """``sum_{i >= n} chi_i`` with ``chi_i = sum_j b_{m-j+1} a_{i+m-2+j}^2``."""
    b = np.asarray(b, dtype=np.float64)
    m = b.size
    return float(sum(b[m - j] * damping_square_tail(sched, n + m - 2 + j) for j in range(1, m + 1)))


@dataclass
class LyapunovState:
    kind: str
    depth: int
    value: float
    noise_bound: float
    tail: float


def lyapunov_simple(e, n: int, sched: DampingSchedule, Xi: float) -> float:
    """``||e||^2 + Xi * sum_{i >= n} a_i^2``."""
    e = np.asarray(e, dtype=np.float64)
    v = float(e @ e) if e.ndim else float(e * e)
    if Xi == 0:
        return v
    return v + Xi * damping_square_tail(sched, n)


def lyapunov_extended(errors, G, n: int, sched: DampingSchedule, b, Xi: float) -> float:
    """Perturbed Lyapunov function of the ``m``-step scheme.

    ``errors`` holds ``e_n .. e_{n+m-1}`` and ``G`` holds ``G_n .. G_{n+m-2}``
    (residual plus noise), both oldest first.  Evaluates::

        ||e_{n+m-1}||^2 + sum_{j=2}^m sum_{i=j}^m b_{m-i+1}
            ||e_{n+j-2+m-i} + a_{n+m-3+j} G_{n+j-2+m-i}||^2
        + Xi * sum_{i >= n} chi_i
    """
    b = np.asarray(b, dtype=np.float64)
    m = b.size
    E = np.asarray(errors, dtype=np.float64).reshape(len(errors), -1)
    Gv = np.asarray(G, dtype=np.float64).reshape(len(G), -1) if len(G) else np.zeros((0, E.shape[1]))
    if E.shape[0] != m or Gv.shape[0] != m - 1:
        raise WindowMismatch(f"need {m} errors and {m - 1} G values, got {E.shape[0]} and {Gv.shape[0]}")
    val = float(E[m - 1] @ E[m - 1])
    for j in range(2, m + 1):
        a = sched(n + m - 3 + j)
        for i in range(j, m + 1):
            k = j - 2 + m - i
            r = E[k] + a * Gv[k]
            val += b[m - i] * float(r @ r)
    if Xi:
        val += Xi * chi_tail(sched, b, n)
    return val


def lyapunov_series(trace, q_star, Xi: float, b=None) -> np.ndarray:
    """``V_n`` along a recorded trace for every ``n`` with a complete window."""
    cfg = trace.config
    b = cfg.b if b is None else np.asarray(b)
    m = b.size
    Q = trace.iterate_array
    E = Q - np.asarray(q_star)
    G = np.asarray(trace.samples).reshape(Q.shape) - Q
    count = len(trace) - m + 1
    out = np.empty(max(count, 0))
    # tails differ by known terms, so compute once and peel off
    tail = chi_tail(cfg.damping, b, 1) if Xi else 0.0
    for idx in range(count):
        n = idx + 1
        if m == 1:
            val = float(E[idx] @ E[idx])
        else:
            val = lyapunov_extended(E[idx : idx + m], G[idx : idx + m - 1], n, cfg.damping, b, 0.0)
        out[idx] = val + Xi * tail
        if Xi:
            tail -= sum(b[m - j] * cfg.damping(n + m - 2 + j) ** 2 for j in range(1, m + 1))
    return out


# --- Jacobian and damping bound ----------------------------------------------


def jacobian_fd(K, q, h: float = 1e-3) -> np.ndarray:
    """Centered-difference Jacobian; column ``j`` is ``(K(q+h e_j) - K(q-h e_j)) / 2h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    J = np.empty((np.asarray(K(q)).size, n))
    for j in range(n):
        dq = np.zeros(n)
        dq[j] = h
        J[:, j] = (np.asarray(K(q + dq)) - np.asarray(K(q - dq))) / (2.0 * h)
    return J


class ThetaMax(NamedTuple):
    value: float
    stability_violation: bool


def theta_max(eigenvalues) -> ThetaMax:
    """Largest ``theta`` with ``|1 - theta + theta*lam| < 1`` for every eigenvalue.

    Per eigenvalue the bound is ``2 (1 - Re lam) / |1 - lam|^2``.  Returns 0
    with the violation flag if some ``Re lam >= 1``.
    """
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=np.complex128))
    if lam.size == 0:
        raise ValueError("no eigenvalues given")
    if np.any(lam.real >= 1.0):
        return ThetaMax(0.0, True)
    bounds = 2.0 * (1.0 - lam.real) / np.abs(1.0 - lam) ** 2
    return ThetaMax(float(bounds.min()), False)


def damped_spectral_radius(eigenvalues, theta: float) -> float:
    """Spectral radius of ``(1 - theta) I + theta K'`` from the eigenvalues of ``K'``."""
    lam = np.asarray(eigenvalues, dtype=np.complex128)
    return float(np.max(np.abs(1.0 - theta + theta * lam)))


# --- companion matrix -----------------------------------------------------------


def companion_matrix(b) -> np.ndarray:
    """First row ``(b_m, ..., b_1)``, ones on the subdiagonal."""
    b = np.asarray(b, dtype=np.float64)
    m = b.size
    B = np.zeros((m, m))
    B[0] = b[::-1]
    if m > 1:
        B[np.arange(1, m), np.arange(m - 1)] = 1.0
    return B


def companion_equilibrium(b, power: int = 256):
    """Left stationary vector ``pi`` of the companion matrix and ``||B^power - 1 pi^T||_max``.

    Requires ``b_1 > 0`` as well as ``b_m > 0``; the mixing driver itself
    only needs ``b_m > 0``.
    """
    try:
        b = validate_coefficients(b, require_first=True)
    except ValueError as exc:
        raise InvalidCoefficients(str(exc)) from exc
    B = companion_matrix(b)
    m = b.size
    # pi (B - I) = 0 with sum(pi) = 1: replace one equation by the normalization
    M = (B - np.eye(m)).T
    M[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    pi = linalg.solve(M, rhs)
    Bp = np.linalg.matrix_power(B, power)
    err = float(np.max(np.abs(Bp - np.outer(np.ones(m), pi))))
    return pi, err


# --- test problems --------------------------------------------------------------


class LinearNoisyProblem:
    """``K(q) = q* + C (q - q*)`` with additive noise uniform on ``[-w, w]`` per entry."""

    def __init__(self, C, q_star=None, noise_width: float = 0.0):
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        if C.shape[0] != C.shape[1]:
            raise ValueError("C must be square")
        self.C = C
        self.dimension = C.shape[0]
        self.q_star = np.zeros(self.dimension) if q_star is None else np.asarray(q_star, float)
        self.noise_width = float(noise_width)

    def exact_eval(self, q):
        q = np.asarray(q, dtype=np.float64)
        return self.q_star + self.C @ (q - self.q_star)

    def sample_eval(self, q, stream: RngStream, n_vec: int = 1):
        k = self.exact_eval(q)
        if self.noise_width == 0.0:
            return k
        xi = stream.generator().uniform(-self.noise_width, self.noise_width, (n_vec, self.dimension))
        return k + xi.mean(axis=0)


PRESETS = {
    "scalar-half": dict(C=[[0.5]], q_star=[0.0], noise_width=1.0),
}


def make_preset(name: str, **overrides) -> LinearNoisyProblem:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return LinearNoisyProblem(**kw)


def exact_fixed_point(problem, warm_start, *, damping: float = 0.2, tol: float = 1e-12, max_iter: int = 10_000):
    """Noise-free simple mixing with constant damping until ``||K(q) - q||_inf <= tol``.

    Returns ``(q_star, residual, trace)``; ``residual > tol`` signals no convergence.
    """
    cfg = MixingConfig(
        damping=DampingSchedule.constant(damping), max_iter=max_iter, block_size=1, tol=tol
    )
    trace = run(ExactProblem(problem), cfg, warm_start)
    q = trace.final
    res = float(np.max(np.abs(problem.exact_eval(q) - q))) if q.size else 0.0
    return q, res, trace


def estimate_xi(problem, q_star, rho: float, seed: int = 0, *, points: int = 20, samples: int = 64) -> float:
    """Noise second-moment bound: max over sampled points in the ball of ``E||k - K||^2``, times 1.5."""
    q_star = np.asarray(q_star, dtype=np.float64)
    n = q_star.size
    rng = RngStream(seed, 0, 0).generator()
    best = 0.0
    for p in range(points):
        d = rng.standard_normal(n)
        d *= rho * rng.uniform() ** (1.0 / n) / max(np.linalg.norm(d), 1e-300)
        q = q_star + d
        K = problem.exact_eval(q)
        ks = np.array([problem.sample_eval(q, RngStream(seed, p + 1, s), 1) for s in range(samples)])
        best = max(best, float(np.mean(np.sum((ks - K) ** 2, axis=1))))
    return XI_SAFETY * best


def derived_seed(seed: int, path: int) -> int:
    """Independent per-path seed derived from a master seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(path,)).generate_state(1, dtype=np.uint64)[0] >> 1)


def initial_lyapunov(trace, q_star, Xi: float) -> float:
    """``V_1`` of the first complete window of a trace."""
    return float(lyapunov_series_head(trace, q_star, Xi))


def lyapunov_series_head(trace, q_star, Xi):
    cfg = trace.config
    b = cfg.b
    m = b.size
    Q = trace.iterate_array[:m]
    E = Q - np.asarray(q_star)
    if m == 1:
        return lyapunov_simple(E[0], 1, cfg.damping, Xi)
    G = np.asarray(trace.samples[: m - 1]).reshape(m - 1, -1) - Q[: m - 1]
    return lyapunov_extended(E, G, 1, cfg.damping, b, Xi)


# --- Monte Carlo experiments ----------------------------------------------------


@dataclass
class StabilityReport:
    rho: float
    paths_run: int
    paths_started_in_ball: int
    exit_count: int
    exit_probability: float
    mc_stderr: float
    bound: float
    xi: float
    depth: int
    path_length: int
    final_errors: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _paths(problem, cfg: MixingConfig, warm_start, n_paths: int, seed: int):
    for p in range(n_paths):
        c = MixingConfig.from_dict({**cfg.to_dict(), "seed": derived_seed(seed, p), "tol": None})
        yield p, run(problem, c, warm_start)


def stability_monte_carlo(
    problem,
    cfg: MixingConfig,
    rho: float,
    q_star,
    n_paths: int,
    seed: int,
    *,
    warm_start=None,
    Xi: Optional[float] = None,
) -> StabilityReport:
    """Empirical probability of leaving the 2-norm ball ``B(q*, rho)``.

    Each path runs ``cfg.max_iter`` steps.  Paths whose first ``m`` iterates
    are not all inside the ball are excluded.  A path exits when some later
    iterate has ``||e_n||_2 > rho``.  The bound is the mean of ``V_1`` over
    included paths divided by ``rho^2``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if not rho > 0:
        raise ValueError("rho must be positive")
    q_star = np.asarray(q_star, dtype=np.float64)
    warm_start = q_star if warm_start is None else np.asarray(warm_start, float)
    if Xi is None:
        Xi = estimate_xi(problem, q_star, rho, seed)
    m = cfg.depth
    exits = 0
    started = 0
    v1 = []
    finals = []
    for _, tr in _paths(problem, cfg, warm_start, n_paths, seed):
        err = np.linalg.norm(tr.iterate_array - q_star, axis=1)
        if np.any(err[:m] > rho):
            continue
        started += 1
        v1.append(initial_lyapunov(tr, q_star, Xi))
        later = err[m:] if m > 1 else err
        final = float(np.linalg.norm(tr.final - q_star))
        if np.any(later > rho) or final > rho:
            exits += 1
        finals.append(final)
    p = exits / started if started else 0.0
    se = math.sqrt(p * (1 - p) / started) if started else 0.0
    bound = float(np.mean(v1)) / rho**2 if v1 else 0.0
    return StabilityReport(float(rho), n_paths, started, exits, p, se, bound, float(Xi), m, cfg.max_iter, finals)


@dataclass
class TrendReport:
    paths_in_ball: int
    mean_increment: float
    mc_stderr: float
    per_step_mean: List[float]
    xi: float
    depth: int

    def to_dict(self) -> dict:
        return asdict(self)


def supermartingale_trend(
    problem,
    cfg: MixingConfig,
    rho: float,
    q_star,
    n_paths: int,
    seed: int,
    *,
    warm_start=None,
    Xi: Optional[float] = None,
) -> TrendReport:
    """Mean one-step increment ``V_{n+1} - V_n`` of the perturbed Lyapunov function.

    Per path the increments are averaged over steps; the report gives the
    mean over paths that never leave the ball and its standard error.
    """
    q_star = np.asarray(q_star, dtype=np.float64)
    warm_start = q_star if warm_start is None else np.asarray(warm_start, float)
    if Xi is None:
        Xi = estimate_xi(problem, q_star, rho, seed)
    per_path = []
    per_step = []
    for _, tr in _paths(problem, cfg, warm_start, n_paths, seed):
        err = np.linalg.norm(tr.iterate_array - q_star, axis=1)
        if np.any(err > rho):
            continue
        V = lyapunov_series(tr, q_star, Xi)
        d = np.diff(V)
        per_path.append(d.mean())
        per_step.append(d)
    P = len(per_path)
    mean = float(np.mean(per_path)) if P else float("nan")
    se = float(np.std(per_path, ddof=1) / math.sqrt(P)) if P > 1 else float("nan")
    step_mean = np.mean(per_step, axis=0).tolist() if P else []
    return TrendReport(P, mean, se, step_mean, float(Xi), cfg.depth)


@dataclass
class ComplexityTable:
    epsilons: List[float]
    hits: List[List[int]]  # seeds x epsilons, -1 if not reached
    candidate: str
    exponent: float
    predicted_slope: Optional[float]
    loglog_slope: Optional[float]
    log_fit_r2: Optional[float]
    max_iter: int

    def to_dict(self) -> dict:
        return asdict(self)


def complexity_scan(
    problem,
    cfg: MixingConfig,
    epsilons: Sequence[float],
    q_star,
    seeds: Sequence[int],
    *,
    warm_start,
    candidate: str = "averaged",
    check_every: int = 1,
) -> ComplexityTable:
    """Iterations needed until the candidate is within ``eps`` of ``q*`` (2-norm).

    ``candidate`` is ``"averaged"`` (the ``A_n``-weighted average) or
    ``"iterate"``.  A hit at 0 means the warm start already qualifies.  Two
    fits are reported over the epsilons reached by every seed: the slope of
    log(mean hits) against log(1/eps), and the R^2 of mean hits against
    log(1/eps).
    """
    if candidate not in ("averaged", "iterate"):
        raise ValueError("candidate must be 'averaged' or 'iterate'")
    eps = np.asarray(sorted(epsilons, reverse=True), dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    w = averaging_weights(cfg, cfg.max_iter) if candidate == "averaged" else None
    hits = np.full((len(seeds), eps.size), -1, dtype=np.int64)
    for s, seed in enumerate(seeds):
        c = MixingConfig.from_dict({**cfg.to_dict(), "seed": int(seed), "tol": None})
        e0 = np.linalg.norm(np.asarray(warm_start, float) - q_star)
        hits[s, eps >= e0] = 0
        num = np.zeros_like(q_star)
        den = 0.0
        for st in iterate(problem, c, warm_start):
            if candidate == "averaged":
                num += w[st.n - 1] * st.q
                den += w[st.n - 1]
                cand = num / den
            else:
                cand = st.q_next
            if st.n % check_every:
                continue
            err = np.linalg.norm(cand - q_star)
            new = (hits[s] < 0) & (eps >= err)
            hits[s, new] = st.n
            if np.all(hits[s] >= 0):
                break
    ok = np.all(hits > 0, axis=0)
    slope = r2 = None
    if ok.sum() >= 2:
        x = np.log(1.0 / eps[ok])
        y = hits[:, ok].mean(axis=0)
        slope = float(np.polyfit(x, np.log(y), 1)[0])
        fit = np.polyfit(x, y, 1)
        resid = y - np.polyval(fit, x)
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = float(1.0 - np.sum(resid**2) / ss) if ss > 0 else 1.0
    d = cfg.damping
    predicted = 2.0 / (1.0 - d.exponent) if d.square_summable and d.exponent < 1 else None
    return ComplexityTable(eps.tolist(), hits.tolist(), candidate, d.exponent, predicted, slope, r2, cfg.max_iter)

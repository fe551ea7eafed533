"""Damped stochastic fixed-point drivers: simple, linear and Anderson mixing.

The drivers work on any object with ``dimension``, ``exact_eval(q)`` and
``sample_eval(q, stream, n_vec)``.  Step ``n`` samples ``k_n = k(q_n, v_n)``
at the current iterate, stores ``(q_n, k_n)`` in a length-``m`` history and
forms::

    q_{n+1} = (1 - a_n) sum_i b_i q_{n-m+i} + a_n sum_i b_i k_{n-m+i}
"""

import csv
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from .estimator import RngStream

SCHEMES = ("simple", "linear", "anderson")
COEFF_TOL = 1e-12


class NonFiniteIterate(ArithmeticError):
    """An iterate left the finite range; the run diverged."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class HistoryLengthMismatch(ValueError):
    pass


class EmptyTrace(ValueError):
    pass


class FixedPointProblem(Protocol):
    dimension: int

    def exact_eval(self, q: np.ndarray) -> np.ndarray: ...

    def sample_eval(self, q: np.ndarray, stream: RngStream, n_vec: int = 1) -> np.ndarray: ...


class ExactProblem:
    """Wrap a problem so that sampling returns the exact map (noise-free runs)."""

    def __init__(self, problem):
        self.problem = problem
        self.dimension = problem.dimension

    def exact_eval(self, q):
        return self.problem.exact_eval(q)

    def sample_eval(self, q, stream=None, n_vec=1):
        return self.problem.exact_eval(q)


@dataclass(frozen=True)
class DampingSchedule:
    """``a_n = min(a / (offset + slope * n**exponent), cap)``.

    ``capped_linear()`` is ``min(1/(50 + 2n), 0.005)`` and ``anderson_default()``
    is ``1/(50 + 4 n**0.75)`` without a cap.  With ``slope > 0`` and ``exponent`` in
    ``(1/2, 1]`` the sum of ``a_n`` diverges while the sum of squares converges.
    """

    a: float = 1.0
    offset: float = 50.0
    slope: float = 2.0
    exponent: float = 1.0
    cap: Optional[float] = 0.005

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if self.offset < 0 or self.slope < 0:
            raise ValueError("offset and slope must be non-negative")
        if not 0.0 <= self.exponent <= 1.0:
            raise ValueError("exponent must lie in [0, 1]")
        if self.offset + self.slope <= 0:
            raise ValueError("offset + slope must be positive")
        if self.cap is not None and not 0.0 < self.cap <= 1.0:
            raise ValueError("cap must lie in (0, 1]")

    @classmethod
    def capped_linear(cls):
        return cls(1.0, 50.0, 2.0, 1.0, 0.005)

    @classmethod
    def anderson_default(cls):
        return cls(1.0, 50.0, 4.0, 0.75, None)

    @classmethod
    def constant(cls, value: float):
        return cls(value, 1.0, 0.0, 1.0, None)

    @classmethod
    def power(cls, a: float, exponent: float, cap: Optional[float] = None):
        """``a / n**exponent``."""
        return cls(a, 0.0, 1.0, exponent, cap)

    @property
    def square_summable(self) -> bool:
        return self.slope > 0 and self.exponent > 0.5

    def values(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if np.any(n < 1):
            raise ValueError("schedule index starts at 1")
        out = self.a / (self.offset + self.slope * n**self.exponent)
        if self.cap is not None:
            out = np.minimum(out, self.cap)
        return out

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("schedule index starts at 1")
        v = self.a / (self.offset + self.slope * float(n) ** self.exponent)
        return v if self.cap is None else min(v, self.cap)


def damping_at(sched: DampingSchedule, n: int) -> float:
    return sched(n)


def uniform_coefficients(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def validate_coefficients(b, *, require_first=False) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.size < 1:
        raise ValueError("mixing coefficients must be a non-empty vector")
    if abs(b.sum() - 1.0) > COEFF_TOL:
        raise ValueError(f"mixing coefficients must sum to 1 (got {b.sum()!r})")
    if np.any(b < 0):
        raise ValueError("mixing coefficients must be non-negative")
    if not b[-1] > 0:
        raise ValueError("the newest-step coefficient b_m must be positive")
    if require_first and not b[0] > 0:
        raise ValueError("the oldest-step coefficient b_1 must be positive")
    return b


@dataclass
class MixingConfig:
    scheme: str = "simple"
    depth: int = 1
    coefficients: Optional[List[float]] = None
    damping: DampingSchedule = field(default_factory=DampingSchedule.capped_linear)
    anderson_regularization: float = 1e-8
    n_vec: int = 1
    ell: int = 20
    max_iter: int = 1000
    seed: int = 0
    warmup_steps: int = 0
    block_size: int = 1000
    tol: Optional[float] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "simple":
            self.depth = 1
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.scheme == "linear":
            if self.coefficients is None:
                self.coefficients = list(uniform_coefficients(self.depth))
            b = validate_coefficients(self.coefficients)
            if b.size != self.depth:
                raise ValueError("number of coefficients must equal depth")
            self.coefficients = [float(x) for x in b]
        elif self.coefficients is not None and self.scheme == "simple":
            self.coefficients = None
        if self.n_vec < 1 or self.ell < 1:
            raise ValueError("n_vec and ell must be >= 1")
        if self.max_iter < 0 or self.warmup_steps < 0 or self.block_size < 1:
            raise ValueError("max_iter, warmup_steps must be >= 0 and block_size >= 1")
        if self.anderson_regularization < 0:
            raise ValueError("anderson_regularization must be >= 0")
        if isinstance(self.damping, dict):
            self.damping = DampingSchedule(**self.damping)

    @property
    def b(self) -> np.ndarray:
        if self.scheme == "simple":
            return np.ones(1)
        if self.coefficients is None:
            return uniform_coefficients(self.depth)
        return np.asarray(self.coefficients)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["damping"] = asdict(self.damping)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixingConfig":
        d = dict(d)
        if "damping" in d and isinstance(d["damping"], dict):
            d["damping"] = DampingSchedule(**d["damping"])
        return cls(**d)


def simple_mixing_step(q, k_val, a: float) -> np.ndarray:
    return (1.0 - a) * np.asarray(q) + a * np.asarray(k_val)


def linear_mixing_step(history, samples, b, a: float) -> np.ndarray:
    """``(1 - a) B_m(history) + a B_m(samples)``; lists are oldest first."""
    b = np.asarray(b, dtype=np.float64)
    if len(history) != b.size or len(samples) != b.size:
        raise HistoryLengthMismatch(
            f"need {b.size} iterates and samples, got {len(history)} and {len(samples)}"
        )
    if b.size == 1:
        return simple_mixing_step(history[0], samples[0], a)
    Bq = b @ np.asarray(history)
    Bk = b @ np.asarray(samples)
    return (1.0 - a) * Bq + a * Bk


def anderson_coefficients(residuals, regularization: float = 0.0) -> np.ndarray:
    """Weights minimizing ``||sum b_i g_i||^2 + lam ||b - 1/m||^2`` with ``sum b_i = 1``.

    ``residuals`` are the last ``m`` residual proxies, oldest first.  The
    constraint is eliminated by writing ``b = e_m + D c``; a singular normal
    matrix falls back to uniform weights.
    """
    G = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    m = G.shape[0]
    if m == 1:
        return np.ones(1)
    u = uniform_coefficients(m)
    dG = (G[:-1] - G[-1]).T  # columns g_i - g_m
    gm = G[-1]
    # D^T D = I + 1 1^T for D = [e_i - e_m]
    DtD = np.eye(m - 1) + 1.0
    e_m = np.zeros(m)
    e_m[-1] = 1.0
    w = e_m - u
    Dt_w = w[:-1] - w[-1]
    lhs = dG.T @ dG + regularization * DtD
    rhs = -(dG.T @ gm + regularization * Dt_w)
    scale = np.abs(lhs).max()
    if not np.isfinite(scale) or scale == 0.0:
        return u
    try:
        if np.linalg.cond(lhs) > 1e12:
            return u
        c = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return u
    if not np.all(np.isfinite(c)):
        return u
    b = np.empty(m)
    b[:-1] = c
    b[-1] = 1.0 - c.sum()
    return b


class IterationTrace:
    """Append-only record of a run.  Row ``n-1`` holds step ``n``."""

    def __init__(self, config: MixingConfig, dimension: int):
        self.config = config
        self.dimension = dimension
        self.iterates: List[np.ndarray] = []
        self.samples: List[np.ndarray] = []
        self.damping: List[float] = []
        self.residual: List[float] = []
        self.coefficients: List[np.ndarray] = []
        self.wall_ms: List[float] = []
        self.final: Optional[np.ndarray] = None
        self.converged = False

    def __len__(self):
        return len(self.iterates)

    def append(self, q, k, a, b, wall_ms):
        self.iterates.append(q)
        self.samples.append(k)
        self.damping.append(a)
        self.residual.append(float(np.max(np.abs(k - q))) if q.size else 0.0)
        self.coefficients.append(b)
        self.wall_ms.append(wall_ms)

    @property
    def iterate_array(self) -> np.ndarray:
        return np.array(self.iterates).reshape(len(self), self.dimension)

    def trailing_means(self, window: Optional[int] = None) -> np.ndarray:
        """Mean of the last ``window`` iterates at every step (shorter at the start)."""
        window = self.config.block_size if window is None else window
        Q = self.iterate_array
        c = np.cumsum(Q, axis=0)
        out = np.empty_like(Q)
        for i in range(len(Q)):
            lo = i - window
            s = c[i] - (c[lo] if lo >= 0 else 0.0)
            out[i] = s / min(i + 1, window)
        return out

    def write_csv(self, path, q_star=None, *, coeff_columns: Optional[int] = None):
        """Trace as CSV: ``n, a_n, res_proxy_inf[, err_inf][, b_1..b_m], wall_ms``."""
        m = self.config.depth if coeff_columns is None else coeff_columns
        with_b = self.config.scheme in ("linear", "anderson")
        header = ["n", "a_n", "res_proxy_inf"]
        if q_star is not None:
            header.append("err_inf")
            err = np.abs(self.trailing_means() - np.asarray(q_star)).max(axis=1) if len(self) else []
        if with_b:
            header += [f"b_{i + 1}" for i in range(m)]
        header.append("wall_ms")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                row = [i + 1, repr(self.damping[i]), repr(self.residual[i])]
                if q_star is not None:
                    row.append(repr(float(err[i])))
                if with_b:
                    b = self.coefficients[i]
                    row += [repr(float(x)) for x in b] if b is not None else [""] * m
                row.append(f"{self.wall_ms[i]:.3f}")
                w.writerow(row)


@dataclass
class Step:
    n: int
    q: np.ndarray
    k: np.ndarray
    a: float
    b: Optional[np.ndarray]
    q_next: np.ndarray
    wall_ms: float


def _warm_start_stack(warm_start, depth: int, dim: int) -> list:
    W = np.array(warm_start, dtype=np.float64)
    if W.shape == (dim,):
        return [W]
    if W.shape == (depth, dim):
        return [row.copy() for row in W]
    raise ValueError(f"warm start has shape {W.shape}, expected ({dim},) or ({depth}, {dim})")


def iterate(problem, cfg: MixingConfig, warm_start, max_iter: Optional[int] = None):
    """Yield one ``Step`` per iteration without storing history beyond ``depth``.

    ``warm_start`` is either one initial iterate or a ``(depth, dim)`` stack of
    initial iterates, oldest first.  With a single iterate the first
    ``depth - 1`` steps use simple mixing; with a stack those steps sample at
    the given iterates and move to the next one.  The first
    ``cfg.warmup_steps`` steps also use simple mixing.  The generator stops
    early only on a non-finite iterate, after yielding that step.
    """
    given = _warm_start_stack(warm_start, cfg.depth, problem.dimension)
    q = given[0]
    m = cfg.depth
    b_fixed = cfg.b
    hist_q = deque(maxlen=m)
    hist_k = deque(maxlen=m)
    total = cfg.max_iter if max_iter is None else max_iter
    for n in range(1, total + 1):
        t0 = time.perf_counter()
        a = cfg.damping(n)
        k = np.asarray(problem.sample_eval(q, RngStream(cfg.seed, n), cfg.n_vec), dtype=np.float64)
        hist_q.append(q)
        hist_k.append(k)
        if n < len(given):
            b = None
            q_next = given[n]
        elif n <= cfg.warmup_steps or len(hist_q) < m or cfg.scheme == "simple":
            b = None
            q_next = simple_mixing_step(q, k, a)
        else:
            if cfg.scheme == "linear":
                b = b_fixed
            else:
                g = np.asarray(hist_k) - np.asarray(hist_q)
                lam = cfg.anderson_regularization * float(np.mean(np.sum(g * g, axis=1)))
                b = anderson_coefficients(g, lam)
            q_next = linear_mixing_step(list(hist_q), list(hist_k), b, a)
        yield Step(n, q, k, a, b, q_next, 1e3 * (time.perf_counter() - t0))
        if not np.all(np.isfinite(q_next)):
            return
        q = q_next


def run(problem, cfg: MixingConfig, warm_start) -> IterationTrace:
    """Run the configured scheme for ``cfg.max_iter`` steps or until the stopping rule fires.

    With ``cfg.tol`` set, the run stops once the block-averaged residual proxy
    has infinity norm below ``tol`` for two consecutive blocks.
    """
    trace = IterationTrace(cfg, problem.dimension)
    trace.final = _warm_start_stack(warm_start, cfg.depth, problem.dimension)[0]
    block_res = []
    below = 0
    for st in iterate(problem, cfg, warm_start):
        trace.append(st.q, st.k, st.a, None if st.b is None else np.asarray(st.b, dtype=np.float64), st.wall_ms)
        trace.final = st.q_next
        if not np.all(np.isfinite(st.q_next)):
            raise NonFiniteIterate(f"non-finite iterate at step {st.n}", trace)
        if cfg.tol is not None:
            block_res.append(st.k - st.q)
            if len(block_res) == cfg.block_size:
                r = float(np.max(np.abs(np.mean(block_res, axis=0))))
                block_res = []
                below = below + 1 if r < cfg.tol else 0
                if below >= 2:
                    trace.converged = True
                    break
    return trace


def averaging_weights(cfg: MixingConfig, count: int) -> np.ndarray:
    """``A_n = sum_j b_{m-j+1} a_{n+m-2+j}`` for ``n = 1..count``.

    Uses the configured coefficients (uniform for Anderson runs).
    """
    b = cfg.b if cfg.scheme != "anderson" else uniform_coefficients(cfg.depth)
    m = b.size
    if count == 0:
        return np.zeros(0)
    a = cfg.damping.values(np.arange(1, count + 2 * m))  # a[k-1] = a_k
    n = np.arange(1, count + 1)
    w = np.zeros(count)
    for j in range(1, m + 1):
        w += b[m - j] * a[n + m - 2 + j - 1]
    return w


def averaged_iterate(trace: IterationTrace, cfg: Optional[MixingConfig] = None, weights=None) -> np.ndarray:
    """Weighted average ``sum A_n q_n / sum A_n`` of the recorded iterates."""
    if len(trace) == 0:
        raise EmptyTrace("trace has no iterates")
    cfg = trace.config if cfg is None else cfg
    w = averaging_weights(cfg, len(trace)) if weights is None else np.asarray(weights, float)
    return (w @ trace.iterate_array) / w.sum()


def block_means(values, block_size: int) -> np.ndarray:
    """Means over consecutive complete blocks of ``block_size`` rows."""
    values = np.asarray(values, dtype=np.float64)
    nb = values.shape[0] // block_size
    if nb == 0:
        return values[:0]
    return values[: nb * block_size].reshape(nb, block_size, *values.shape[1:]).mean(axis=1)

"""Probe vectors and the Hutchinson diagonal estimator.

Random streams are counter based: the probe for ``(master_seed,
iteration_index, sample_index)`` is drawn from a Philox generator keyed by
exactly that triple, so results do not depend on evaluation order.
"""

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_ENUMERATION_DIM = 12


class DimensionTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ProbeDistribution:
    dim: int
    kind: str = "rademacher"

    def __post_init__(self):
        if self.kind not in ("rademacher", "gaussian"):
            raise ValueError(f"unknown probe distribution {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    iteration_index: int = 0
    sample_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.iteration_index, self.sample_index)
        )
        return np.random.Generator(np.random.Philox(seq))

    def at(self, iteration_index=None, sample_index=None) -> "RngStream":
        return RngStream(
            self.master_seed,
            self.iteration_index if iteration_index is None else iteration_index,
            self.sample_index if sample_index is None else sample_index,
        )


def draw_probe(dist: ProbeDistribution, stream: RngStream) -> np.ndarray:
    rng = stream.generator()
    if dist.kind == "rademacher":
        return 2.0 * rng.integers(0, 2, size=dist.dim).astype(np.float64) - 1.0
    return rng.standard_normal(dist.dim)


def draw_probes(dist: ProbeDistribution, stream: RngStream, n_vec: int) -> np.ndarray:
    """``n_vec`` probes as rows, sample indices counting up from ``stream``'s."""
    return np.stack(
        [draw_probe(dist, stream.at(sample_index=stream.sample_index + i)) for i in range(n_vec)]
    )


def enumerate_rademacher(dim: int) -> np.ndarray:
    """All ``2**dim`` sign vectors, lexicographic with ``+1`` before ``-1``."""
    if dim > MAX_ENUMERATION_DIM:
        raise DimensionTooLarge(f"dim={dim} exceeds {MAX_ENUMERATION_DIM}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return np.array(list(itertools.product((1.0, -1.0), repeat=dim)))


def diag_estimate(
    apply: Callable[[np.ndarray], np.ndarray],
    dist: ProbeDistribution,
    n_vec: int,
    stream: RngStream,
):
    """Hutchinson estimate of ``diag(A)`` from ``n_vec`` probes.

    Returns the sample mean of ``(A v) * v`` and its per-entry sample
    variance (``ddof=1``; zeros when ``n_vec == 1``).  Samples are reduced
    in ascending sample index.
    """
    if n_vec < 1:
        raise ValueError("n_vec must be >= 1")
    probes = draw_probes(dist, stream, n_vec)
    return diag_from_probes(apply, probes)


def diag_from_probes(apply, probes):
    samples = np.stack([apply(v) * v for v in probes])
    mean = samples.mean(axis=0)
    if samples.shape[0] > 1:
        var = samples.var(axis=0, ddof=1)
    else:
        var = np.zeros_like(mean)
    return mean, var

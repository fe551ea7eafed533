"""Compare the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Kernel timings call both implementations directly.  The end-to-end
timing runs one stochastic charge evaluation per backend in a fresh
interpreter, since the backend is chosen at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stochscf._kernels import _pure

try:
    from stochscf._kernels import _ckernels
except ImportError:
    _ckernels = None

END_TO_END = """
import timeit, numpy as np
from stochscf import dftb
from stochscf.estimator import RngStream
s = dftb.generate_synthetic(dftb.SyntheticSpec(atoms={atoms}, seed=0))
p = dftb.DFTBProblem(dftb.SCCModel(s), ell=20)
t = timeit.Timer(lambda: p.sample_eval(s.q0, RngStream(1, 1), n_vec=4))
print(min(t.repeat({repeat}, 1)))
"""


def _cases(rng):
    M = 400
    A = rng.standard_normal((M, M))
    A = (A + A.T) / np.sqrt(M)
    w = rng.choice([-1.0, 1.0], M)
    alpha = rng.standard_normal(60)
    beta = rng.uniform(0.1, 1.0, 59)
    x = rng.standard_normal(20000)
    offsets = np.arange(0, 20001, 4, dtype=np.int64)
    return {
        "lanczos (M=400, ell=40)": lambda k: k.lanczos_tridiag(A, w, 40, 1e-12),
        "tridiag_eigh (ell=60)": lambda k: k.tridiag_eigh(alpha, beta),
        "block_sums (20000 -> 5000)": lambda k: k.block_sums(x, offsets),
        "fermi_dirac (20000)": lambda k: k.fermi_dirac(x, 0.1, 5.0),
    }


def _time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _end_to_end(pure, atoms, repeat):
    env = dict(os.environ)
    env.pop("STOCHSCF_PURE", None)
    if pure:
        env["STOCHSCF_PURE"] = "1"
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(atoms=atoms, repeat=repeat)],
                         env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--atoms", type=int, default=128)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return 1

    print(f"{'kernel':32s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, call in _cases(np.random.default_rng(0)).items():
        tp = _time(lambda: call(_pure), args.repeat)
        tc = _time(lambda: call(_ckernels), args.repeat)
        print(f"{name:32s} {tp * 1e6:10.1f}us {tc * 1e6:10.1f}us {tp / tc:7.2f}x")

    tp = _end_to_end(True, args.atoms, args.repeat)
    tc = _end_to_end(False, args.atoms, args.repeat)
    name = f"charge sample (N={args.atoms}, 4 probes)"
    print(f"{name:32s} {tp * 1e3:10.2f}ms {tc * 1e3:10.2f}ms {tp / tc:7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

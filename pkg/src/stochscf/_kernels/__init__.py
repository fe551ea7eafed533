"""Hot inner kernels with a compiled backend and a NumPy fallback.

The compiled extension ``_ckernels`` is used when it was built and
``STOCHSCF_PURE`` is unset; otherwise the pure NumPy versions are used.
``BACKEND`` reports which one is active.
"""

import os

from . import _pure

BACKEND = "python"
_compiled = None

if not os.environ.get("STOCHSCF_PURE"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    lanczos_tridiag = _compiled.lanczos_tridiag
    tridiag_eigh = _compiled.tridiag_eigh
    block_sums = _compiled.block_sums
    fermi_dirac = _compiled.fermi_dirac
else:
    lanczos_tridiag = _pure.lanczos_tridiag
    tridiag_eigh = _pure.tridiag_eigh
    block_sums = _pure.block_sums
    fermi_dirac = _pure.fermi_dirac

__all__ = [
    "BACKEND",
    "lanczos_tridiag",
    "tridiag_eigh",
    "block_sums",
    "fermi_dirac",
]

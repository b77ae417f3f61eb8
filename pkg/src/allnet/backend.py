"""Kernel backend selection.

The convolution and pooling inner loops exist twice: numba-jitted loops
(`kernels_numba`) and a vectorized pure-numpy fallback (`kernels_numpy`).
The env var ``ALLNET_BACKEND`` picks one at import time:

  auto   (default) numba when importable, numpy otherwise
  numba  require the jitted kernels, fail if numba is missing
  numpy  force the fallback even when numba is installed

Both modules expose the same function surface; ``benchmarks/bench_kernels.py``
times one against the other.
"""

from __future__ import annotations

import os

_choice = os.environ.get("ALLNET_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"ALLNET_BACKEND must be 'auto', 'numba' or 'numpy', got {_choice!r}"
    )

if _choice == "numpy":
    from . import kernels_numpy as kernels

    BACKEND = "numpy"
elif _choice == "numba":
    from . import kernels_numba as kernels

    BACKEND = "numba"
else:
    try:
        from . import kernels_numba as kernels

        BACKEND = "numba"
    except ImportError:
        from . import kernels_numpy as kernels

        BACKEND = "numpy"


def active_backend() -> str:
    """Name of the kernel backend the package is running on."""
    return BACKEND

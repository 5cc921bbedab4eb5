"""Select the compute backend for the coarsened-likelihood kernel.

The compiled Cython extension is preferred; the vectorized numpy
implementation is the fallback.  Set HEAPSAE_BACKEND=numpy (or =cython)
to force a choice, e.g. for benchmarking.
"""

from __future__ import annotations

import os
import warnings

_choice = os.environ.get("HEAPSAE_BACKEND", "auto").lower()

if _choice in ("auto", ""):
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

        warnings.warn(
            "heapsae: compiled kernel unavailable, using the numpy fallback",
            RuntimeWarning,
            stacklevel=2,
        )
elif _choice in ("cython", "c", "compiled"):
    from . import _kernels as kernels  # type: ignore[attr-defined]
elif _choice in ("numpy", "python", "py"):
    from . import _kernels_py as kernels
else:
    raise ImportError(f"unknown HEAPSAE_BACKEND value {_choice!r}")

backend_name = kernels.BACKEND_NAME


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _kernels  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def load_backend(name):
    """Import a kernel backend module by name."""
    if name == "numpy":
        from . import _kernels_py

        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")

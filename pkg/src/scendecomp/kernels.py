"""Backend selection for the hot PHA kernels.

The compiled Cython module is preferred.  Setting ``SCENDECOMP_PURE=1`` in the
environment, or a failed import, selects the pure NumPy fallback.  ``BACKEND``
names the active choice.
"""
import os

from . import _kernels_py

if os.environ.get("SCENDECOMP_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels_c as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

EXPONENTIAL = _kernels_py.EXPONENTIAL
POWER = _kernels_py.POWER
LOGARITHMIC = _kernels_py.LOGARITHMIC

aggregate = _impl.aggregate
multiplier_step = _impl.multiplier_step
batched_matvec = _impl.batched_matvec
hara_root = _impl.hara_root

"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
module is used. Set ``MCSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("MCSIM_PURE_PYTHON", "") not in ("", "0"):
    from mcsim import _kernels_py as _impl
else:
    try:
        from mcsim import _kernels as _impl
    except ImportError:  # extension not built
        from mcsim import _kernels_py as _impl

BACKEND = _impl.BACKEND
LruSets = _impl.LruSets
xor_fold = _impl.xor_fold
extract_fields = _impl.extract_fields
simulate_lru = _impl.simulate_lru

__all__ = ["BACKEND", "LruSets", "xor_fold", "extract_fields", "simulate_lru"]

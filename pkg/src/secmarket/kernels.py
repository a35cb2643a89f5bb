"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``SECMARKET_PURE=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SECMARKET_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

splitmix_stream = _impl.splitmix_stream
expand_mask = _impl.expand_mask
sq_dist_rows = _impl.sq_dist_rows

__all__ = ["BACKEND", "splitmix_stream", "expand_mask", "sq_dist_rows"]

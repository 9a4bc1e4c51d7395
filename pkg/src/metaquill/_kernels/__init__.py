"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
functionally and bit-for-bit equivalent. Override with METAQUILL_KERNELS=
"compiled" (fail if missing) or "numpy".
"""

import os

_choice = os.environ.get("METAQUILL_KERNELS", "auto").lower()

if _choice in ("auto", "", "compiled", "c"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice in ("compiled", "c"):
            raise
        from . import np_backend as _impl
elif _choice in ("numpy", "py", "python"):
    from . import np_backend as _impl
else:
    raise ValueError(f"unknown METAQUILL_KERNELS value: {_choice!r}")

BACKEND = _impl.NAME
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2 = _impl.maxpool2x2
pool_gather = _impl.pool_gather
pool_scatter = _impl.pool_scatter

__all__ = ["BACKEND", "im2col", "col2im", "maxpool2x2", "pool_gather", "pool_scatter"]

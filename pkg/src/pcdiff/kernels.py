"""Backend selection for the hot loops.

The compiled extension is used when importable; otherwise the numpy
fallback. Set ``PCDIFF_PURE_PYTHON=1`` to force the fallback.
"""
import os

from pcdiff import _fallback

if os.environ.get("PCDIFF_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from pcdiff import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

splat_zbuffer = _impl.splat_zbuffer
nearest_mask_pixel = _impl.nearest_mask_pixel
grid_nearest = _impl.grid_nearest
grid_within = _impl.grid_within

__all__ = ["BACKEND", "splat_zbuffer", "nearest_mask_pixel", "grid_nearest", "grid_within"]

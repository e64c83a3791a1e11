"""Geometry hot loops, compiled when possible.

The Cython extension ``_ckernels`` is preferred; the numpy fallback is used
when the extension was not built or ``KWSPOT_PURE_PYTHON=1`` is set.
``BACKEND`` names the active implementation.
"""
import os

from . import _fallback

if os.environ.get("KWSPOT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

rasterize_polygon = _impl.rasterize_polygon
label_components = _impl.label_components
convex_intersection_area = _impl.convex_intersection_area
rotated_nms = _impl.rotated_nms
convex_hull = _impl.convex_hull
min_area_rect = _impl.min_area_rect


def compiled():
    """Return the compiled module, or None if it is not importable."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


__all__ = [
    "BACKEND",
    "compiled",
    "rasterize_polygon",
    "label_components",
    "convex_intersection_area",
    "rotated_nms",
    "convex_hull",
    "min_area_rect",
]

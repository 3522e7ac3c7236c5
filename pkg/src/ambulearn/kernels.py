"""Hot-loop kernels, compiled when available.

The Cython extension ``ambulearn._kernels`` is used if it was built; otherwise
the pure-Python twins in ``ambulearn._kernels_py`` are imported. Setting
``AMBULEARN_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("AMBULEARN_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

haversine_km = _impl.haversine_km
haversine_matrix = _impl.haversine_matrix
max_weight_assignment = _impl.max_weight_assignment

__all__ = ["BACKEND", "haversine_km", "haversine_matrix", "max_weight_assignment"]

"""Query-kernel backend selection.

The compiled Cython extension is preferred; the pure-NumPy fallback is
used when the extension is unavailable or ``CARIMESH_FORCE_NUMPY`` is set.
Both expose closest_point / ray_first_hit / ray_crossings with identical
semantics.
"""

import os

from . import numpy_backend

if os.environ.get("CARIMESH_FORCE_NUMPY"):
    _impl = numpy_backend
else:
    try:
        from . import _fastcore as _impl
    except ImportError:
        _impl = numpy_backend

BACKEND = _impl.NAME

closest_point = _impl.closest_point
ray_first_hit = _impl.ray_first_hit
ray_crossings = _impl.ray_crossings


def get_backend(name):
    """Explicit backend lookup ('numpy' or 'compiled'), for benchmarks."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        from . import _fastcore

        return _fastcore
    raise ValueError(f"unknown kernel backend {name!r}")

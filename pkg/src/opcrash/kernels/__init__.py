"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension ``_core`` is used when it imports; otherwise, or when
``OPCRASH_PURE=1`` is set, the numpy versions in :mod:`.fallback` are used.
``BACKEND`` names the active implementation.
"""
import os

from . import fallback

if os.environ.get("OPCRASH_PURE", "") == "1":
    _impl = fallback
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = fallback
        BACKEND = "numpy"

ball_query = _impl.ball_query
simulate_lattice = _impl.simulate_lattice

__all__ = ["BACKEND", "ball_query", "simulate_lattice", "fallback"]

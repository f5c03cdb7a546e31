"""Hot loops, dispatched to numba when available and not disabled.

Set ``DISTMDP_DISABLE_NUMBA=1`` before import to force the numpy versions.
"""

from .._backend import USE_NUMBA, backend_name
from . import _numpy

if USE_NUMBA:
    from . import _numba as _impl
else:
    _impl = _numpy

exhaustive_search = _impl.exhaustive_search
fiber_gains = _impl.fiber_gains
simulate_paths = _impl.simulate_paths

__all__ = ["USE_NUMBA", "backend_name", "exhaustive_search", "fiber_gains", "simulate_paths", "_numpy"]

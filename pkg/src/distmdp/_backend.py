import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

#: Set DISTMDP_DISABLE_NUMBA=1 to force the pure-numpy kernels.
DISABLED = os.environ.get("DISTMDP_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

USE_NUMBA = HAVE_NUMBA and not DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

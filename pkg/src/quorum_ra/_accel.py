"""Backend selection for the hot kernels.

The numba path is used when numba imports and ``QUORUM_RA_BACKEND`` is not
set to ``numpy``. Both paths implement the same arithmetic; results agree to
rounding, not bitwise.
"""

import os

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKENDS = ("numba", "numpy")


def default_backend():
    env = os.environ.get("QUORUM_RA_BACKEND", "").strip().lower()
    if env == "numpy" or not HAVE_NUMBA:
        return "numpy"
    if env in ("", "numba"):
        return "numba"
    raise ValueError(f"QUORUM_RA_BACKEND must be one of {BACKENDS}, got {env!r}")


def resolve_backend(backend=None):
    if backend is None:
        return default_backend()
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:  # pragma: no cover
        return "numpy"
    return backend

"""Kernel backend selection.

Hot stepping loops exist twice: a numba @njit version and a pure-numpy
version vectorized across trajectories. The environment variable
``NELSONLAB_DISABLE_NUMBA=1`` forces the numpy path; the numpy path is
also used automatically when numba is not importable. Both paths
consume pre-drawn Wiener increments, so results do not depend on the
backend beyond floating-point library differences (bit-identical for
polynomial forces).
"""

import os

DISABLE_ENV = "NELSONLAB_DISABLE_NUMBA"


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def numba_enabled() -> bool:
    if os.environ.get(DISABLE_ENV, "0") not in ("", "0", "false", "False"):
        return False
    return numba_available()


NUMBA_ENABLED = numba_enabled()
BACKEND = "numba" if NUMBA_ENABLED else "numpy"

"""Backend switch for the compiled kernels.

Set ``REGIONDIT_NUMBA=0`` to force the pure-numpy path. The flag is read once
at import time.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional at runtime
    numba = None

HAVE_NUMBA = numba is not None

_flag = os.environ.get("REGIONDIT_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(fn=None, **options):
    """Compile ``fn`` with numba when available; otherwise return it unchanged."""
    if fn is None:
        return lambda f: njit(f, **options)
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True, **options)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

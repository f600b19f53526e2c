"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the ``MEMEGP_BACKEND``
environment variable:

* ``auto`` (default) -- numba when importable, numpy otherwise
* ``numba``          -- require the numba backend, fail loudly if missing
* ``numpy``          -- force the pure-numpy fallback

``benchmarks/bench_kernels.py`` compares the two.
"""

import logging
import os

from . import numpy_backend

_log = logging.getLogger("memegp.kernels")

_requested = os.environ.get("MEMEGP_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"MEMEGP_BACKEND={_requested!r} is not one of 'auto', 'numba', 'numpy'"
    )

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _log.debug("numba unavailable, falling back to the numpy backend")
        _impl = numpy_backend
        BACKEND = "numpy"

conv2d_valid = _impl.conv2d_valid
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward

"""Hot-loop kernels with a compiled core and a pure-python fallback.

The compiled extension (``_cyext``, built from Cython when a compiler is
available) is preferred at import time; set ``TAPERCAL_BACKEND=python``
to force the numpy fallback.  Both backends are bit-identical; see
``benchmarks/bench_kernels.py`` for the speed comparison.
"""

from __future__ import annotations

import os

from . import _fallback

_impl = _fallback
BACKEND = "python"

if os.environ.get("TAPERCAL_BACKEND", "").lower() not in ("python", "fallback"):
    try:
        from . import _cyext as _compiled

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass

bilinear_gather = _impl.bilinear_gather
bicubic_gather = _impl.bicubic_gather
sep_correlate_valid = _impl.sep_correlate_valid


def backend() -> str:
    """Name of the active backend: ``compiled`` or ``python``."""
    return BACKEND

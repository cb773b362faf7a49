"""Backend selection for the oracle reduction kernel.

The compiled extension is preferred when present; set FDSLAB_NO_EXT=1 to force
the pure-numpy fallback.  Both backends implement the same contract and are
cross-checked in the test suite and the benchmark script.
"""
from __future__ import annotations

import os

from . import _kernels_np

if os.environ.get("FDSLAB_NO_EXT") == "1":
    _impl = _kernels_np
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_np

BACKEND: str = _impl.BACKEND
oracle_reduce = _impl.oracle_reduce

__all__ = ["BACKEND", "oracle_reduce"]

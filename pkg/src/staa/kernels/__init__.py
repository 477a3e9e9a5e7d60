"""Hot numeric kernels with backend selection at import time.

The compiled Cython extension is preferred when present; the numpy
implementation is the fallback and the reference. Set STAA_PURE_PYTHON=1
to force the fallback (used by the kernel benchmark and parity tests).
Both backends implement the same signatures and agree to ~1e-12.
"""

import os

from . import _numpy

if os.environ.get("STAA_PURE_PYTHON") == "1":
    _impl = _numpy
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy

BACKEND: str = _impl.BACKEND
fused_attention = _impl.fused_attention

__all__ = ["BACKEND", "fused_attention", "_numpy"]

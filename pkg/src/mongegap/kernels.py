"""Backend selection for the hot Sinkhorn loop.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``MONGEGAP_PURE=1`` to force the fallback.
"""

import os

from . import _sinkhorn_py

if os.environ.get("MONGEGAP_PURE", "") not in ("", "0"):
    _impl = _sinkhorn_py
    BACKEND = "python"
else:
    try:
        from . import _sinkhorn_ext as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _sinkhorn_py
        BACKEND = "python"

sinkhorn_loop = _impl.sinkhorn_loop

__all__ = ["BACKEND", "sinkhorn_loop"]

"""Backend selection for the hot forward-backward kernel.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Setting ``UWBHMM_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

try:
    if os.environ.get("UWBHMM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _fb_core as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

fb_batch = _impl.fb_batch

BACKENDS = {"python": _kernels_py.fb_batch}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl.fb_batch
else:
    try:
        from . import _fb_core

        BACKENDS["cython"] = _fb_core.fb_batch
    except ImportError:
        pass

"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension ``_core`` is used when it has been built; otherwise, or
when ``CAPFADE_PURE_PYTHON=1`` is set, the numpy implementations in
``_fallback`` are used. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

if _core is not None and os.environ.get("CAPFADE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = _core
    BACKEND = "cython"
else:
    _impl = _fallback
    BACKEND = "python"


def backends() -> dict:
    """All importable kernel implementations, keyed by name."""
    out = {"python": _fallback}
    if _core is not None:
        out["cython"] = _core
    return out


def knee_sse(x, y, min_side: int = 3, impl=None):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = np.ascontiguousarray(x - x.mean())
    yc = np.ascontiguousarray(y - y.mean())
    return (impl or _impl).knee_sse(xc, yc, min_side)


def conv1d_forward(x, w, bias, impl=None):
    return (impl or _impl).conv1d_forward(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(bias, dtype=np.float64),
    )


def conv1d_backward(x, w, grad_y, impl=None):
    return (impl or _impl).conv1d_backward(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(grad_y, dtype=np.float64),
    )

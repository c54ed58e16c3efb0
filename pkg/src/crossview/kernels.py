"""Backend selection for the convolution and pooling kernels.

The compiled extension is used when it was built and ``CROSSVIEW_PURE_PYTHON``
is not set. Dtypes other than float32/float64 (e.g. the extended precision
used by the gradient checker) always go through the numpy backend.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FAST_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_active = _compiled if (_compiled is not None and not os.environ.get("CROSSVIEW_PURE_PYTHON")) else _kernels_py


def backend_name() -> str:
    return "compiled" if _active is _compiled else "python"


def compiled_available() -> bool:
    return _compiled is not None


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch backend (``"compiled"`` or ``"python"``)."""
    global _active
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        new = _compiled
    elif name == "python":
        new = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    old, _active = _active, new
    try:
        yield
    finally:
        _active = old


def _pick(arr: np.ndarray):
    return _active if arr.dtype in _FAST_DTYPES else _kernels_py


def im2col(x, kh, kw, sy, sx, py, px):
    x = np.ascontiguousarray(x)
    return _pick(x).im2col(x, kh, kw, sy, sx, py, px)


def col2im(cols, c, h, w, kh, kw, sy, sx, py, px):
    cols = np.ascontiguousarray(cols)
    return _pick(cols).col2im(cols, c, h, w, kh, kw, sy, sx, py, px)


def maxpool_forward(x, k, s, p):
    x = np.ascontiguousarray(x)
    return _pick(x).maxpool_forward(x, k, s, p)


def maxpool_backward(grad, arg, h, w, k, s, p):
    grad = np.ascontiguousarray(grad)
    return _pick(grad).maxpool_backward(grad, np.ascontiguousarray(arg, dtype=np.int64), h, w, k, s, p)

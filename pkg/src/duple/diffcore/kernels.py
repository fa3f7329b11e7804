"""Backend selection for the convolution kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Set ``DUPLE_KERNELS=python`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DUPLE_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def use(backend):
    """Switch backend at runtime ("cython" or "python"); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if backend == "python":
        _impl = _kernels_py
    elif backend == "cython":
        from . import _kernels as _compiled

        _impl = _compiled
    else:
        raise ValueError(f"unknown kernel backend {backend!r}")
    BACKEND = backend
    return prev


def im2col1d(x, k, stride, lout):
    return _impl.im2col1d(x, k, stride, lout)


def col2im1d(cols, channels, length, k, stride):
    return _impl.col2im1d(cols, channels, length, k, stride)


def im2col2d(x, kh, kw, stride, hout, wout):
    return _impl.im2col2d(x, kh, kw, stride, hout, wout)


def col2im2d(cols, channels, height, width, kh, kw, stride, hout, wout):
    return _impl.col2im2d(cols, channels, height, width, kh, kw, stride, hout, wout)

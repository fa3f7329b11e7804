"""Pure-numpy im2col / col2im, used when the compiled module is unavailable.

Same signatures and layouts as ``_kernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col1d(x, k, stride, lout):
    nb, nc, _ = x.shape
    sb, sc, sl = x.strides
    win = as_strided(x, shape=(nb, lout, nc, k), strides=(sb, sl * stride, sc, sl), writeable=False)
    return np.ascontiguousarray(win).reshape(nb, lout, nc * k)


def col2im1d(cols, channels, length, k, stride):
    nb, lout, _ = cols.shape
    c4 = cols.reshape(nb, lout, channels, k)
    out = np.zeros((nb, channels, length))
    span = stride * (lout - 1) + 1
    # k strided slice-adds instead of a scatter; slices never overlap within one j
    for j in range(k):
        out[:, :, j:j + span:stride] += c4[:, :, :, j].transpose(0, 2, 1)
    return out


def im2col2d(x, kh, kw, stride, hout, wout):
    nb, nc, _, _ = x.shape
    sb, sc, sh, sw = x.strides
    win = as_strided(
        x,
        shape=(nb, hout, wout, nc, kh, kw),
        strides=(sb, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return np.ascontiguousarray(win).reshape(nb, hout * wout, nc * kh * kw)


def col2im2d(cols, channels, height, width, kh, kw, stride, hout, wout):
    nb = cols.shape[0]
    c6 = cols.reshape(nb, hout, wout, channels, kh, kw)
    out = np.zeros((nb, channels, height, width))
    hspan = stride * (hout - 1) + 1
    wspan = stride * (wout - 1) + 1
    for u in range(kh):
        for v in range(kw):
            out[:, :, u:u + hspan:stride, v:v + wspan:stride] += c6[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return out

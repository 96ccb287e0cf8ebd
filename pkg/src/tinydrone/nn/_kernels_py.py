"""Pure numpy kernels. Reference backend and fallback for ``_ckernels``.

All functions take already padded NHWC inputs.  Integer variants receive
zero-point-centred int32 activations and return int64 accumulators; they are
computed through float64 products, which is exact while every partial sum
stays below 2**53 (far above anything an int8 layer can reach).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def _windows(xp, kh, kw, stride):
    # (N, Ho, Wo, C, kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_float(xp, w, stride):
    o, kh, kw, c = w.shape
    win = _windows(xp, kh, kw, stride)
    n, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    out = cols @ w.reshape(o, -1).T
    return out.reshape(n, ho, wo, o).astype(np.float32, copy=False)


def conv2d_int(xp, w, stride):
    o, kh, kw, c = w.shape
    win = _windows(xp, kh, kw, stride)
    n, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    out = cols.astype(np.float64) @ w.reshape(o, -1).T.astype(np.float64)
    return out.reshape(n, ho, wo, o).astype(np.int64)


def _depthwise(xp, w, stride, acc_dtype):
    _, kh, kw, c = w.shape
    n, hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, ho, wo, c), dtype=acc_dtype)
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
            out += tap * w[0, i, j, :].astype(acc_dtype)
    return out


def depthwise_float(xp, w, stride):
    return _depthwise(xp, w, stride, np.float32)


def depthwise_int(xp, w, stride):
    return _depthwise(xp.astype(np.int64), w, stride, np.int64)


def requantize(acc, multiplier, zero_point):
    q = np.rint(acc.astype(np.float64) * multiplier) + zero_point
    return np.clip(q, -128, 127).astype(np.int8)

"""Layer kernels in real32 and int8.

The inner loops come from the compiled ``_ckernels`` extension when it is
importable, otherwise from ``_kernels_py``.  Set ``TINYDRONE_PURE_PYTHON=1``
to force the fallback.  ``use_backend`` switches at runtime (benchmarks and
backend-equivalence tests use it).
"""

from __future__ import annotations

import os

import numpy as np

from ..tensor import QMAX, QMIN, DType, QuantError, QuantParams, Tensor, quantize_array
from . import _kernels_py

_BACKENDS = {"python": _kernels_py}
try:
    if os.environ.get("TINYDRONE_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _ckernels

    _BACKENDS["cython"] = _ckernels
    _impl = _ckernels
except ImportError:
    _impl = _kernels_py


def backend() -> str:
    return _impl.BACKEND


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> str:
    """Select a kernel backend; returns the previous one."""
    global _impl
    prev = _impl.BACKEND
    try:
        _impl = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})") from None
    return prev


class ShapeError(ValueError):
    pass


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def output_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - k) // stride + 1


def _pad(x, kh, kw, stride, padding, value):
    if padding == "valid":
        return x
    top, bottom = same_padding(x.shape[1], kh, stride)
    left, right = same_padding(x.shape[2], kw, stride)
    if not (top or bottom or left or right):
        return x
    return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=value)


def _as_batch(data):
    return data[None] if data.ndim == 3 else data


def _need_q(*ts):
    for t in ts:
        if t.qparams is None:
            raise QuantError("int8 kernel needs qparams on every operand")


def _check_conv(x, w, depthwise):
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeError(f"expected NHWC input and 4-d weights, got {x.shape} and {w.shape}")
    if depthwise:
        if w.shape[0] != 1 or w.shape[3] != x.shape[-1]:
            raise ShapeError(f"depthwise weights {w.shape} do not match {x.shape[-1]} channels")
    elif w.shape[3] != x.shape[-1]:
        raise ShapeError(f"weights expect {w.shape[3]} input channels, input has {x.shape[-1]}")


def _spatial(x: Tensor, w: Tensor, bias, stride, padding, out_qp, depthwise):
    _check_conv(x.data, w.data, depthwise)
    kh, kw = w.shape[1], w.shape[2]
    xb = _as_batch(x.data)
    if padding == "valid" and (xb.shape[1] < kh or xb.shape[2] < kw):
        raise ShapeError("kernel larger than unpadded input")
    nout = w.shape[3] if depthwise else w.shape[0]
    if bias is not None and np.shape(bias) != (nout,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({nout},)")

    if x.dtype is DType.REAL32:
        xp = np.ascontiguousarray(_pad(xb, kh, kw, stride, padding, 0.0))
        wd = np.ascontiguousarray(w.data, dtype=np.float32)
        if depthwise:
            out = _impl.depthwise_float(xp, wd, stride)
        elif kh == kw == 1:
            out = _pointwise_float(xp[:, ::stride, ::stride], wd)
        else:
            out = _impl.conv2d_float(xp, wd, stride)
        if bias is not None:
            out = out + np.asarray(bias, dtype=np.float32)
        out = out.astype(np.float32, copy=False)
        return Tensor(out if x.data.ndim == 4 else out[0])

    _need_q(x, w)
    if out_qp is None:
        raise QuantError("int8 kernel needs output qparams")
    zp = x.qparams.zero_point
    xp = _pad(xb.astype(np.int32) - zp, kh, kw, stride, padding, 0)
    xp = np.ascontiguousarray(xp, dtype=np.int32)
    wq = np.ascontiguousarray(w.data, dtype=np.int8)
    if depthwise:
        acc = _impl.depthwise_int(xp, wq, stride)
    elif kh == kw == 1:
        acc = _pointwise_int(xp[:, ::stride, ::stride], wq)
    else:
        acc = _impl.conv2d_int(xp, wq, stride)
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.int64)
    mult = x.qparams.scale * w.qparams.scale / out_qp.scale
    q = _impl.requantize(acc, mult, out_qp.zero_point)
    return Tensor(q if x.data.ndim == 4 else q[0], DType.INT8, out_qp)


def _pointwise_float(x, w):
    n, h, wd, c = x.shape
    out = x.reshape(-1, c) @ w.reshape(w.shape[0], c).T
    return out.reshape(n, h, wd, -1)


def _pointwise_int(x, w):
    n, h, wd, c = x.shape
    out = x.reshape(-1, c).astype(np.float64) @ w.reshape(w.shape[0], c).T.astype(np.float64)
    return out.reshape(n, h, wd, -1).astype(np.int64)


def conv2d(x: Tensor, w: Tensor, bias=None, stride=1, padding="same", out_qp=None) -> Tensor:
    """Standard convolution. Int8 bias is int32 at scale ``s_in * s_w``."""
    return _spatial(x, w, bias, stride, padding, out_qp, depthwise=False)


def depthwise_conv2d(x: Tensor, w: Tensor, bias=None, stride=1, padding="same", out_qp=None) -> Tensor:
    return _spatial(x, w, bias, stride, padding, out_qp, depthwise=True)


def relu6(x: Tensor, out_qp: QuantParams | None = None) -> Tensor:
    if x.dtype is DType.REAL32:
        return Tensor(np.clip(x.data, 0.0, 6.0))
    _need_q(x)
    out_qp = out_qp or x.qparams
    lo = max(QMIN, int(quantize_array(0.0, out_qp)))
    hi = min(QMAX, int(quantize_array(6.0, out_qp)))
    if out_qp == x.qparams:
        q = x.data.astype(np.int64)
    else:
        mult = x.qparams.scale / out_qp.scale
        q = np.rint((x.data.astype(np.float64) - x.qparams.zero_point) * mult) + out_qp.zero_point
    return Tensor(np.clip(q, lo, hi).astype(np.int8), DType.INT8, out_qp)


def global_avg_pool(x: Tensor, out_qp: QuantParams | None = None) -> Tensor:
    xb = _as_batch(x.data)
    hw = xb.shape[1] * xb.shape[2]
    if hw < 1:
        raise ShapeError("global pool needs a non-empty spatial extent")
    if x.dtype is DType.REAL32:
        out = xb.astype(np.float64).mean(axis=(1, 2), keepdims=True).astype(np.float32)
        return Tensor(out if x.data.ndim == 4 else out[0])
    _need_q(x)
    out_qp = out_qp or x.qparams
    acc = (xb.astype(np.int64) - x.qparams.zero_point).sum(axis=(1, 2), keepdims=True)
    q = _impl.requantize(acc, x.qparams.scale / (out_qp.scale * hw), out_qp.zero_point)
    return Tensor(q if x.data.ndim == 4 else q[0], DType.INT8, out_qp)


def fully_connected(x: Tensor, w: Tensor, bias=None, out_qp=None) -> Tensor:
    """``x`` is (N, K) or anything flattening to K per sample; ``w`` is (O, K)."""
    data = x.data
    squeeze = data.ndim == 1
    flat = data.reshape(1, -1) if squeeze else data.reshape(data.shape[0], -1)
    if w.data.ndim != 2 or flat.shape[1] != w.shape[1]:
        raise ShapeError(f"fully_connected: input features {flat.shape[1]} vs weights {w.shape}")
    if bias is not None and np.shape(bias) != (w.shape[0],):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({w.shape[0]},)")
    if x.dtype is DType.REAL32:
        out = flat @ w.data.T
        if bias is not None:
            out = out + np.asarray(bias, dtype=np.float32)
        out = out.astype(np.float32)
        return Tensor(out[0] if squeeze else out)
    _need_q(x, w)
    if out_qp is None:
        raise QuantError("int8 kernel needs output qparams")
    acc = (flat.astype(np.float64) - x.qparams.zero_point) @ w.data.T.astype(np.float64)
    acc = acc.astype(np.int64)
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.int64)
    q = _impl.requantize(acc, x.qparams.scale * w.qparams.scale / out_qp.scale, out_qp.zero_point)
    return Tensor(q[0] if squeeze else q, DType.INT8, out_qp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, always in real arithmetic."""
    if x.dtype is DType.INT8:
        _need_q(x)
        z = x.qparams.scale * (x.data.astype(np.float64) - x.qparams.zero_point)
    else:
        z = x.data.astype(np.float64)
    if z.shape[-1] < 1:
        raise ShapeError("softmax needs at least one class")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return Tensor((e / e.sum(axis=-1, keepdims=True)).astype(np.float32))


def residual_add(a: Tensor, b: Tensor, out_qp: QuantParams | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual operands differ: {a.shape} vs {b.shape}")
    if a.dtype is DType.REAL32:
        return Tensor(a.data + b.data)
    _need_q(a, b)
    out_qp = out_qp or a.qparams
    real = a.qparams.scale * (a.data.astype(np.float64) - a.qparams.zero_point)
    real += b.qparams.scale * (b.data.astype(np.float64) - b.qparams.zero_point)
    return Tensor(quantize_array(real, out_qp), DType.INT8, out_qp)

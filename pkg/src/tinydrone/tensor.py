"""Dense tensors and per-tensor affine int8 quantization.

Activations are stored NHWC, convolution weights OHWI.  An int8 tensor always
carries its ``QuantParams``; real values are recovered as
``scale * (q - zero_point)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

QMIN = -128
QMAX = 127


class DType(str, Enum):
    REAL32 = "real32"
    INT8 = "int8"

    @property
    def itemsize(self) -> int:
        return 4 if self is DType.REAL32 else 1


class Scheme(str, Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


class QuantError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise QuantError(f"scale must be positive and finite, got {self.scale!r}")
        if not QMIN <= self.zero_point <= QMAX:
            raise QuantError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable tensor. ``data`` keeps its numpy shape; ``shape`` mirrors it."""

    data: np.ndarray
    dtype: DType = DType.REAL32
    qparams: QuantParams | None = None

    def __post_init__(self):
        want = np.float32 if self.dtype is DType.REAL32 else np.int8
        arr = np.ascontiguousarray(self.data, dtype=want)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.dtype is DType.INT8 and self.qparams is None:
            raise QuantError("int8 tensor requires qparams")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def nbytes(self) -> int:
        return int(self.data.size) * self.dtype.itemsize

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.qparams == other.qparams
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    @classmethod
    def real(cls, values) -> "Tensor":
        return cls(np.asarray(values, dtype=np.float32))

    @classmethod
    def int8(cls, values, qparams: QuantParams) -> "Tensor":
        arr = np.asarray(values)
        if arr.size and (arr.min() < QMIN or arr.max() > QMAX):
            raise QuantError("int8 values outside [-128, 127]")
        return cls(arr.astype(np.int8), DType.INT8, qparams)


def round_half_even(x):
    # np.rint follows the IEEE default (ties to even)
    return np.rint(x)


def nudge_range(lo: float, hi: float, width: float = 2.0**-20) -> tuple[float, float]:
    """Make a range contain zero; an all-zero range becomes ``[0, width]``.

    Only the exactly degenerate case is widened: activations of a small-init
    backbone legitimately live around 1e-15 and must keep their scale.
    """
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if lo == hi:
        hi = lo + width
    return lo, hi


def compute_quant_params(lo: float, hi: float, scheme: Scheme = Scheme.ASYMMETRIC) -> QuantParams:
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise QuantError(f"non-finite range [{lo}, {hi}]")
    if lo > hi:
        raise QuantError(f"min {lo} greater than max {hi}")
    if lo == 0.0 and hi == 0.0:
        raise QuantError("degenerate range [0, 0]")
    scheme = Scheme(scheme)
    if scheme is Scheme.SYMMETRIC:
        return QuantParams(max(abs(lo), abs(hi)) / 127.0, 0)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = (hi - lo) / 255.0
    zp = int(round_half_even(QMIN - lo / scale))
    return QuantParams(scale, min(max(zp, QMIN), QMAX))


def quantize_array(x, qp: QuantParams) -> np.ndarray:
    q = round_half_even(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_array(q, qp: QuantParams) -> np.ndarray:
    return qp.scale * (np.asarray(q, dtype=np.float64) - qp.zero_point)


def quantize(t: Tensor, qp: QuantParams) -> Tensor:
    return Tensor(quantize_array(t.data, qp), DType.INT8, qp)


def dequantize(t: Tensor) -> Tensor:
    if t.qparams is None:
        raise QuantError("cannot dequantize a tensor without qparams")
    return Tensor(dequantize_array(t.data, t.qparams).astype(np.float32))


def real_values(t: Tensor) -> np.ndarray:
    """float64 view of a tensor's real values, whatever its dtype."""
    if t.dtype is DType.REAL32:
        return t.data.astype(np.float64)
    return dequantize_array(t.data, t.qparams)

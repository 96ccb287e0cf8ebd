"""TWNG binary model container.

Layout (little-endian)::

    header   magic "TWNG" | version u16 | dtype u8 | reserved u8
             | input H,W,C u16x3 | classes u16 | layers u32 | qparams u32 | blob bytes u32
    layers   op u8 | stride u8 | padding u8 | n_in u8 | inputs u32*n_in | output u32
             | out rank u8 | out dims u32*rank
             | w rank u8 | w dims u32*rank | [w offset u32 | w bytes u32 | w scale f64 | w zp i32]
             | bias len u32 | [bias offset u32 | bias bytes u32]
    qparams  tensor id u32 | scale f64 | zero point i32
    blob     weights (f32 or i8) and biases (f32 or i32), in layer order
"""

from __future__ import annotations

import struct

import numpy as np

from ..tensor import DType, QuantParams, Tensor
from .graph import Layer, ModelGraph, Op

MAGIC = b"TWNG"
VERSION = 1
_HEADER = struct.Struct("<4sHBB3HHIII")
_DTYPE_CODES = {DType.REAL32: 0, DType.INT8: 1}
_PADDING_CODES = {"same": 0, "valid": 1}


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


def _weight_dtype(model_dtype):
    return ("<i1", "<i4") if model_dtype is DType.INT8 else ("<f4", "<f4")


def serialize(model: ModelGraph) -> bytes:
    wdt, bdt = _weight_dtype(model.dtype)
    table = bytearray()
    blob = bytearray()
    for layer in model.layers:
        table += struct.pack("<BBBB", int(layer.op), layer.stride, _PADDING_CODES[layer.padding],
                             len(layer.inputs))
        table += struct.pack(f"<{len(layer.inputs)}II", *layer.inputs, layer.output)
        table += struct.pack(f"<B{len(layer.out_shape)}I", len(layer.out_shape), *layer.out_shape)
        if layer.weight is None:
            table += struct.pack("<B", 0)
        else:
            raw = layer.weight.data.astype(wdt).tobytes()
            shape = layer.weight.shape
            qp = layer.weight.qparams or QuantParams(1.0, 0)
            table += struct.pack(f"<B{len(shape)}I", len(shape), *shape)
            table += struct.pack("<IIdi", len(blob), len(raw), qp.scale, qp.zero_point)
            blob += raw
        if layer.bias is None:
            table += struct.pack("<I", 0)
        else:
            raw = np.asarray(layer.bias).astype(bdt).tobytes()
            table += struct.pack("<III", len(layer.bias), len(blob), len(raw))
            blob += raw
    qtable = bytearray()
    for tid in sorted(model.qparams):
        qp = model.qparams[tid]
        qtable += struct.pack("<Idi", tid, qp.scale, qp.zero_point)
    header = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[model.dtype], 0, *model.input_shape,
                          model.num_classes, len(model.layers), len(model.qparams), len(blob))
    return bytes(header + table + qtable + blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        st = struct.Struct("<" + fmt)
        if self.pos + st.size > len(self.data):
            raise ParseError(f"truncated: need {st.size} bytes for {fmt!r}", self.pos)
        vals = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return vals


def deserialize(data: bytes) -> ModelGraph:
    r = _Reader(data)
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", len(data))
    magic, version, dtype_code, _, h, w, c, classes, n_layers, n_q, blob_len = r.unpack(_HEADER.format[1:])
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    codes = {v: k for k, v in _DTYPE_CODES.items()}
    if dtype_code not in codes:
        raise ParseError(f"bad dtype flag {dtype_code}", 6)
    dtype = codes[dtype_code]
    paddings = {v: k for k, v in _PADDING_CODES.items()}
    wdt, bdt = _weight_dtype(dtype)

    pending = []
    for _ in range(n_layers):
        at = r.pos
        op_code, stride, pad_code, n_in = r.unpack("BBBB")
        try:
            op = Op(op_code)
        except ValueError:
            raise ParseError(f"unknown op code {op_code}", at) from None
        if pad_code not in paddings:
            raise ParseError(f"bad padding code {pad_code}", at + 2)
        inputs = r.unpack(f"{n_in}I")
        (output,) = r.unpack("I")
        (rank,) = r.unpack("B")
        out_shape = r.unpack(f"{rank}I")
        (wrank,) = r.unpack("B")
        wspec = None
        if wrank:
            wshape = r.unpack(f"{wrank}I")
            woff, wlen, wscale, wzp = r.unpack("IIdi")
            wspec = (wshape, woff, wlen, wscale, wzp, r.pos)
        (blen,) = r.unpack("I")
        bspec = None
        if blen:
            boff, bbytes = r.unpack("II")
            bspec = (blen, boff, bbytes, r.pos)
        pending.append((op, stride, paddings[pad_code], inputs, output, out_shape, wspec, bspec))

    qparams = {}
    for _ in range(n_q):
        at = r.pos
        tid, scale, zp = r.unpack("Idi")
        try:
            qparams[tid] = QuantParams(scale, zp)
        except ValueError as exc:
            raise ParseError(str(exc), at) from None

    blob_start = r.pos
    if blob_start + blob_len > len(data):
        raise ParseError(f"truncated weight blob: expected {blob_len} bytes", len(data))
    if blob_start + blob_len != len(data):
        raise ParseError("trailing bytes after weight blob", blob_start + blob_len)
    blob = data[blob_start:]

    layers = []
    for op, stride, padding, inputs, output, out_shape, wspec, bspec in pending:
        weight = bias = None
        if wspec:
            wshape, woff, wlen, wscale, wzp, at = wspec
            expect = int(np.prod(wshape)) * np.dtype(wdt).itemsize
            if wlen != expect or woff + wlen > blob_len:
                raise ParseError("weight extent inconsistent with shape or blob", at - 20)
            arr = np.frombuffer(blob, wdt, count=int(np.prod(wshape)), offset=woff).reshape(wshape)
            if dtype is DType.INT8:
                weight = Tensor(arr.copy(), DType.INT8, QuantParams(wscale, wzp))
            else:
                weight = Tensor(arr.astype(np.float32))
        if bspec:
            blen, boff, bbytes, at = bspec
            if bbytes != blen * 4 or boff + bbytes > blob_len:
                raise ParseError("bias extent inconsistent with blob", at - 8)
            arr = np.frombuffer(blob, bdt, count=blen, offset=boff)
            bias = arr.astype(np.int32 if dtype is DType.INT8 else np.float32)
        layers.append(Layer(op, tuple(inputs), output, tuple(out_shape), stride, padding, weight, bias))
    return ModelGraph(layers, (h, w, c), classes, dtype, qparams)


def save_model(model: ModelGraph, path) -> int:
    data = serialize(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def models_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """Bit-exact comparison of topology, qparams and every weight and bias."""
    if (a.dtype, tuple(a.input_shape), a.num_classes, a.qparams) != (
        b.dtype, tuple(b.input_shape), b.num_classes, b.qparams
    ):
        return False
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if (la.op, la.inputs, la.output, tuple(la.out_shape), la.stride, la.padding) != (
            lb.op, lb.inputs, lb.output, tuple(lb.out_shape), lb.stride, lb.padding
        ):
            return False
        if (la.weight is None) != (lb.weight is None) or (la.bias is None) != (lb.bias is None):
            return False
        if la.weight is not None:
            if la.weight.qparams != lb.weight.qparams:
                return False
            if la.weight.data.tobytes() != lb.weight.data.tobytes() or la.weight.shape != lb.weight.shape:
                return False
        if la.bias is not None and np.asarray(la.bias).tobytes() != np.asarray(lb.bias).tobytes():
            return False
    return True

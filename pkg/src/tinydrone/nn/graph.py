"""Model graphs: MobileNetV2-style construction, execution and text dumps."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..tensor import DType, QuantParams, Tensor, quantize_array
from . import kernels as K

INPUT_ID = 0

# (expansion t, out channels c, repeats n, first stride s)
MOBILENET_V2_STAGES = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


class Op(IntEnum):
    CONV2D = 1
    DEPTHWISE_CONV2D = 2
    RELU6 = 3
    GLOBAL_AVG_POOL = 4
    FULLY_CONNECTED = 5
    SOFTMAX = 6
    RESIDUAL_ADD = 7


WEIGHTED = (Op.CONV2D, Op.DEPTHWISE_CONV2D, Op.FULLY_CONNECTED)


class GraphError(ValueError):
    pass


@dataclass
class Layer:
    op: Op
    inputs: tuple[int, ...]
    output: int
    out_shape: tuple[int, ...]
    stride: int = 1
    padding: str = "same"
    weight: Tensor | None = None
    bias: np.ndarray | None = None


@dataclass(frozen=True)
class BlockSpec:
    expansion: int
    out_channels: int
    stride: int

    def __post_init__(self):
        if self.expansion < 1 or self.out_channels < 1 or self.stride not in (1, 2):
            raise GraphError(f"invalid block {self}")


@dataclass
class ModelGraph:
    layers: list[Layer]
    input_shape: tuple[int, int, int]
    num_classes: int
    dtype: DType = DType.REAL32
    qparams: dict[int, QuantParams] = field(default_factory=dict)

    @property
    def output_id(self) -> int:
        return self.layers[-1].output

    def tensor_shapes(self) -> dict[int, tuple[int, ...]]:
        shapes = {INPUT_ID: tuple(self.input_shape)}
        for layer in self.layers:
            shapes[layer.output] = tuple(layer.out_shape)
        return shapes

    def activation_ids(self) -> list[int]:
        """Tensor ids that carry int8 activations (everything but the softmax output)."""
        ids = [INPUT_ID]
        ids += [l.output for l in self.layers if l.op is not Op.SOFTMAX]
        return ids

    def param_count(self) -> int:
        n = 0
        for layer in self.layers:
            if layer.weight is not None:
                n += layer.weight.data.size
            if layer.bias is not None:
                n += layer.bias.size
        return n

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def validate(self):
        produced = {INPUT_ID}
        for i, layer in enumerate(self.layers):
            for t in layer.inputs:
                if t not in produced:
                    raise GraphError(f"layer {i} ({layer.op.name}) consumes tensor {t} before it is produced")
            if layer.output in produced:
                raise GraphError(f"tensor {layer.output} produced twice")
            produced.add(layer.output)
        if not self.layers or self.layers[-1].op is not Op.SOFTMAX:
            raise GraphError("graph must end in a softmax")


def make_divisible(value: float, divisor: int = 8, min_value: int | None = None) -> int:
    """Round a channel count to the nearest multiple of ``divisor``.

    Never rounds down by more than 10%.
    """
    min_value = min_value or divisor
    new = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


class _Builder:
    def __init__(self, input_shape, rng, init_bound):
        self.layers: list[Layer] = []
        self.shapes = {INPUT_ID: tuple(input_shape)}
        self.next_id = 1
        self.rng = rng
        self.init_bound = init_bound

    def _emit(self, op, inputs, out_shape, **kw) -> int:
        tid = self.next_id
        self.next_id += 1
        self.layers.append(Layer(op, tuple(inputs), tid, tuple(out_shape), **kw))
        self.shapes[tid] = tuple(out_shape)
        return tid

    def _weights(self, shape):
        bound = self.init_bound
        if bound is None:
            fan_in = int(np.prod(shape[1:])) if shape[0] != 1 else shape[1] * shape[2]
            bound = float(np.sqrt(6.0 / fan_in))
        w = self.rng.uniform(-bound, bound, size=shape).astype(np.float32)
        return Tensor(w)

    def conv(self, x, out_c, k, stride):
        h, w, c = self.shapes[x]
        oh, ow = K.output_size(h, k, stride, "same"), K.output_size(w, k, stride, "same")
        return self._emit(Op.CONV2D, [x], (oh, ow, out_c), stride=stride,
                          weight=self._weights((out_c, k, k, c)), bias=np.zeros(out_c, np.float32))

    def depthwise(self, x, stride):
        h, w, c = self.shapes[x]
        oh, ow = K.output_size(h, 3, stride, "same"), K.output_size(w, 3, stride, "same")
        return self._emit(Op.DEPTHWISE_CONV2D, [x], (oh, ow, c), stride=stride,
                          weight=self._weights((1, 3, 3, c)), bias=np.zeros(c, np.float32))

    def relu6(self, x):
        return self._emit(Op.RELU6, [x], self.shapes[x])

    def add(self, a, b):
        return self._emit(Op.RESIDUAL_ADD, [a, b], self.shapes[a])

    def block(self, x, spec: BlockSpec):
        in_c = self.shapes[x][-1]
        y = x
        if spec.expansion != 1:
            y = self.relu6(self.conv(y, in_c * spec.expansion, 1, 1))
        y = self.relu6(self.depthwise(y, spec.stride))
        y = self.conv(y, spec.out_channels, 1, 1)
        if spec.stride == 1 and in_c == spec.out_channels:
            y = self.add(x, y)
        return y

    def head(self, x, classes):
        c = self.shapes[x][-1]
        p = self._emit(Op.GLOBAL_AVG_POOL, [x], (1, 1, c))
        logits = self._emit(Op.FULLY_CONNECTED, [p], (classes,),
                            weight=self._weights((classes, c)), bias=np.zeros(classes, np.float32))
        return self._emit(Op.SOFTMAX, [logits], (classes,))


def inverted_residual_block(input_shape, spec: BlockSpec, seed: int = 0,
                            init_bound: float | None = 0.1) -> ModelGraph:
    """A standalone block subgraph (no classifier head, no trailing softmax)."""
    b = _Builder(input_shape, np.random.default_rng(seed), init_bound)
    b.block(INPUT_ID, spec)
    return ModelGraph(b.layers, tuple(input_shape), num_classes=0)


def build_mobilenet_v2(width_multiplier: float = 0.35, input_res: int = 96, classes: int = 2,
                       seed: int = 0, init_bound: float | None = 0.1) -> ModelGraph:
    if not width_multiplier > 0:
        raise GraphError(f"width multiplier must be positive, got {width_multiplier}")
    if input_res <= 0 or input_res % 32:
        raise GraphError(f"input resolution must be a positive multiple of 32, got {input_res}")
    if classes < 1:
        raise GraphError("need at least one class")
    b = _Builder((input_res, input_res, 3), np.random.default_rng(seed), init_bound)
    x = b.relu6(b.conv(INPUT_ID, make_divisible(32 * width_multiplier), 3, 2))
    for t, c, n, s in MOBILENET_V2_STAGES:
        out_c = make_divisible(c * width_multiplier)
        for i in range(n):
            x = b.block(x, BlockSpec(t, out_c, s if i == 0 else 1))
    last = make_divisible(1280 * width_multiplier) if width_multiplier > 1.0 else 1280
    x = b.relu6(b.conv(x, last, 1, 1))
    b.head(x, classes)
    model = ModelGraph(b.layers, (input_res, input_res, 3), classes)
    model.validate()
    return model


def channel_plan(model: ModelGraph) -> list[int]:
    """Output channels of every convolution, in execution order."""
    return [l.out_shape[-1] for l in model.layers if l.op in (Op.CONV2D, Op.DEPTHWISE_CONV2D)]


def _fmt_shape(shape) -> str:
    return "x".join(str(s) for s in shape)


def dump_graph(model: ModelGraph) -> str:
    """One line per layer: index, op, tensor ids, output shape, kernel params."""
    shapes = model.tensor_shapes()
    lines = [f"input id=0 shape={_fmt_shape(model.input_shape)} classes={model.num_classes}"]
    for i, layer in enumerate(model.layers):
        ins = ",".join(str(t) for t in layer.inputs)
        parts = [f"{i:03d}", layer.op.name, f"in={ins}", f"out={layer.output}",
                 f"in_shape={_fmt_shape(shapes[layer.inputs[0]])}", f"out_shape={_fmt_shape(layer.out_shape)}"]
        if layer.op in (Op.CONV2D, Op.DEPTHWISE_CONV2D):
            parts += [f"stride={layer.stride}", f"pad={layer.padding}"]
        if layer.weight is not None:
            parts.append(f"w={_fmt_shape(layer.weight.shape)}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def topology_hash(model: ModelGraph) -> str:
    return hashlib.sha256(dump_graph(model).encode()).hexdigest()


def _run_layer(model: ModelGraph, layer: Layer, values):
    x = values[layer.inputs[0]]
    qp = model.qparams.get(layer.output)
    op = layer.op
    if op in WEIGHTED and layer.weight is None:
        raise GraphError(f"layer producing tensor {layer.output} has no weights")
    if op is Op.CONV2D:
        return K.conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding, qp)
    if op is Op.DEPTHWISE_CONV2D:
        return K.depthwise_conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding, qp)
    if op is Op.RELU6:
        return K.relu6(x, qp)
    if op is Op.RESIDUAL_ADD:
        return K.residual_add(x, values[layer.inputs[1]], qp)
    if op is Op.GLOBAL_AVG_POOL:
        return K.global_avg_pool(x, qp)
    if op is Op.FULLY_CONNECTED:
        return K.fully_connected(x, layer.weight, layer.bias, qp)
    if op is Op.SOFTMAX:
        return K.softmax(x)
    raise GraphError(f"unknown op {op!r}")


def _last_use(model: ModelGraph) -> dict[int, int]:
    last = {}
    for i, layer in enumerate(model.layers):
        for t in layer.inputs:
            last[t] = i
    return last


def _prepare_input(model: ModelGraph, images) -> Tensor:
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    if isinstance(images, Tensor) and images.dtype is DType.INT8:
        x = images
    else:
        x = None
    batched = data if data.ndim == 4 else data[None]
    if batched.shape[1:] != tuple(model.input_shape):
        raise K.ShapeError(f"image shape {batched.shape[1:]} does not match model input {model.input_shape}")
    if x is not None:
        return Tensor(batched, DType.INT8, x.qparams)
    if model.dtype is DType.INT8:
        qp = model.qparams[INPUT_ID]
        return Tensor(quantize_array(batched, qp), DType.INT8, qp)
    return Tensor(batched.astype(np.float32))


def execute(model: ModelGraph, images, observer=None) -> Tensor:
    """Run every layer in order on a batch; ``observer(tensor_id, Tensor)`` sees each value.

    Buffers are dropped after their last consumer.
    """
    last = _last_use(model)
    values = {INPUT_ID: _prepare_input(model, images)}
    if observer:
        observer(INPUT_ID, values[INPUT_ID])
    for i, layer in enumerate(model.layers):
        out = _run_layer(model, layer, values)
        values[layer.output] = out
        if observer:
            observer(layer.output, out)
        for t in layer.inputs:
            if last[t] == i:
                del values[t]
    return values[model.output_id]


def run_inference(model: ModelGraph, image, batch_size: int = 64) -> np.ndarray:
    """Class probabilities for one image (H, W, C) or a batch (N, H, W, C).

    Float images are expected in [0, 1].
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 3:
        return execute(model, image).data[0]
    out = [execute(model, data[i:i + batch_size]).data for i in range(0, len(data), batch_size)]
    if not out:
        return np.zeros((0, model.num_classes), np.float32)
    return np.concatenate(out)

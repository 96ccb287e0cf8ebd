"""Post-training quantization: calibration, real32 -> int8 conversion, evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .nn.graph import INPUT_ID, WEIGHTED, ModelGraph, Op, execute, run_inference
from .tensor import (
    DType,
    QuantError,
    Scheme,
    Tensor,
    compute_quant_params,
    dequantize_array,
    nudge_range,
    quantize_array,
)

INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
CLASS_NAMES = ("mask", "no_mask")


@dataclass
class CalibrationProfile:
    ranges: dict[int, tuple[float, float]] = field(default_factory=dict)

    def observe(self, tensor_id: int, values: np.ndarray):
        lo, hi = float(values.min()), float(values.max())
        if tensor_id in self.ranges:
            plo, phi = self.ranges[tensor_id]
            lo, hi = min(lo, plo), max(hi, phi)
        self.ranges[tensor_id] = (lo, hi)

    def merge(self, other: "CalibrationProfile") -> "CalibrationProfile":
        out = CalibrationProfile(dict(self.ranges))
        for tid, (lo, hi) in other.ranges.items():
            out.observe(tid, np.array([lo, hi]))
        return out

    def contains(self, other: "CalibrationProfile") -> bool:
        return all(
            tid in self.ranges and self.ranges[tid][0] <= lo and hi <= self.ranges[tid][1]
            for tid, (lo, hi) in other.ranges.items()
        )


def calibrate(model: ModelGraph, images, batch_size: int = 64) -> CalibrationProfile:
    """Running min/max of every activation over a calibration set of [0, 1] images."""
    if model.dtype is not DType.REAL32:
        raise QuantError("calibrate expects a real32 model")
    if len(images) == 0:
        raise QuantError("empty calibration set")
    profile = CalibrationProfile()
    wanted = set(model.activation_ids())

    def observe(tid, t):
        if tid in wanted:
            profile.observe(tid, t.data)

    for i in range(0, len(images), batch_size):
        execute(model, images[i:i + batch_size], observe)
    return profile


def weight_qparams(w: np.ndarray):
    # scale derived from the float32 max so dequantize -> requantize is a fixpoint
    m = float(np.float32(np.abs(w).max())) if w.size else 0.0
    return compute_quant_params(*nudge_range(-m, m), Scheme.SYMMETRIC)


def quantize_model(model: ModelGraph, profile: CalibrationProfile) -> ModelGraph:
    if model.dtype is not DType.REAL32:
        raise QuantError("quantize_model expects a real32 model")
    missing = [t for t in model.activation_ids() if t not in profile.ranges]
    if missing:
        raise QuantError(f"calibration profile misses tensors {missing[:5]}")
    out = model.copy()
    out.dtype = DType.INT8
    out.qparams = {
        t: compute_quant_params(*nudge_range(*profile.ranges[t]), Scheme.ASYMMETRIC)
        for t in model.activation_ids()
    }
    for layer in out.layers:
        if layer.op not in WEIGHTED:
            continue
        w = layer.weight.data
        wqp = weight_qparams(w)
        layer.weight = Tensor(quantize_array(w, wqp), DType.INT8, wqp)
        bias_scale = out.qparams[layer.inputs[0]].scale * wqp.scale
        b = np.rint(np.asarray(layer.bias, np.float64) / bias_scale)
        layer.bias = np.clip(b, INT32_MIN, INT32_MAX).astype(np.int32)
    return out


def dequantize_model(model: ModelGraph) -> ModelGraph:
    """Real32 copy of an int8 model with weights and biases mapped back to reals."""
    if model.dtype is not DType.INT8:
        raise QuantError("dequantize_model expects an int8 model")
    out = model.copy()
    out.dtype = DType.REAL32
    for layer in out.layers:
        if layer.op not in WEIGHTED:
            continue
        wqp = layer.weight.qparams
        bias_scale = model.qparams[layer.inputs[0]].scale * wqp.scale
        layer.weight = Tensor(dequantize_array(layer.weight.data, wqp).astype(np.float32))
        layer.bias = (layer.bias.astype(np.float64) * bias_scale).astype(np.float32)
    out.qparams = {}
    return out


def weight_payload_bytes(model: ModelGraph) -> int:
    return sum(l.weight.nbytes for l in model.layers if l.weight is not None)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: truth (mask, no_mask); cols: prediction
    agreement: float | None = None

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def csv_row(self, name: str, dtype: str) -> list:
        (tp, fn), (fp, tn) = self.confusion.tolist()
        agree = "" if self.agreement is None else f"{self.agreement:.6f}"
        return [name, dtype, f"{self.accuracy:.6f}", tp, fn, fp, tn, agree]


EVAL_CSV_HEADER = ["model", "dtype", "accuracy", "tp", "fn", "fp", "tn", "agreement"]


def confusion_matrix(labels, predictions, classes: int = 2) -> np.ndarray:
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def evaluate(model: ModelGraph, images, labels, reference: ModelGraph | None = None,
             probabilities=None, reference_probabilities=None) -> EvalResult:
    """Accuracy and confusion matrix; with a reference model, also argmax agreement.

    Precomputed ``probabilities`` skip the inference pass.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise QuantError("empty evaluation set")
    if labels.min() < 0 or labels.max() > 1:
        raise QuantError("labels must be 0 (mask) or 1 (no mask)")
    probs = run_inference(model, images) if probabilities is None else probabilities
    pred = np.argmax(probs, axis=1)
    cm = confusion_matrix(labels, pred)
    agreement = None
    if reference is not None or reference_probabilities is not None:
        ref = run_inference(reference, images) if reference_probabilities is None else reference_probabilities
        agreement = float(np.mean(np.argmax(ref, axis=1) == pred))
    return EvalResult(float(np.trace(cm) / cm.sum()), cm, agreement)


def write_eval_csv(path, rows):
    """``rows`` is an iterable of ``(model_name, dtype, EvalResult)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_CSV_HEADER)
        for name, dtype, res in rows:
            w.writerow(res.csv_row(name, str(dtype)))

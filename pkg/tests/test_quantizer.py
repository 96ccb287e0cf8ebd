import csv

import numpy as np
import pytest

from tinydrone.nn.graph import Op, build_mobilenet_v2, run_inference, topology_hash
from tinydrone.quantizer import (
    CalibrationProfile,
    EVAL_CSV_HEADER,
    calibrate,
    confusion_matrix,
    dequantize_model,
    evaluate,
    quantize_model,
    weight_payload_bytes,
    write_eval_csv,
)
from tinydrone.tensor import DType, QuantError, Tensor


@pytest.fixture(scope="module")
def small():
    m = build_mobilenet_v2(input_res=32, seed=2, init_bound=None)
    x = np.random.default_rng(0).uniform(0, 1, (16, 32, 32, 3)).astype(np.float32)
    return m, x


def test_relu6_ranges_inside_0_6(small):
    m, x = small
    prof = calibrate(m, x)
    for layer in m.layers:
        if layer.op is Op.RELU6:
            lo, hi = prof.ranges[layer.output]
            assert 0.0 <= lo <= hi <= 6.0
    assert prof.ranges[0][0] >= 0.0 and prof.ranges[0][1] <= 1.0


def test_profile_merge_is_monotone(small):
    m, x = small
    a, b = calibrate(m, x[:8]), calibrate(m, x[8:])
    merged = a.merge(b)
    assert merged.contains(a) and merged.contains(b)
    full = calibrate(m, x)
    for tid, rng in full.ranges.items():
        assert merged.ranges[tid] == pytest.approx(rng, abs=1e-5)


def test_degenerate_zero_model_is_nudged():
    m = build_mobilenet_v2(input_res=32)
    for layer in m.layers:
        if layer.weight is not None:
            layer.weight = Tensor(np.zeros_like(layer.weight.data))
    prof = calibrate(m, np.zeros((1, 32, 32, 3), np.float32))
    assert all(r == (0.0, 0.0) for r in prof.ranges.values())
    q = quantize_model(m, prof)
    assert all(qp.scale > 0 for qp in q.qparams.values())
    assert run_inference(q, np.zeros((32, 32, 3))).tolist() == [0.5, 0.5]


def test_quantized_structure(small):
    m, x = small
    q = quantize_model(m, calibrate(m, x))
    assert q.dtype is DType.INT8
    assert topology_hash(q) == topology_hash(m)
    assert weight_payload_bytes(m) == 4 * weight_payload_bytes(q)
    for layer in q.layers:
        if layer.weight is not None:
            assert layer.weight.qparams.zero_point == 0
            assert layer.bias.dtype == np.int32
    assert m.dtype is DType.REAL32  # input untouched


def test_dequantize_model_round_trip(small):
    m, x = small
    q = quantize_model(m, calibrate(m, x))
    d = dequantize_model(q)
    assert d.dtype is DType.REAL32
    for a, b in zip(m.layers, d.layers):
        if a.weight is not None:
            scale = np.abs(a.weight.data).max() / 127
            assert np.abs(a.weight.data - b.weight.data).max() <= scale / 2 + 1e-7


def test_conversion_errors(small):
    m, x = small
    q = quantize_model(m, calibrate(m, x))
    with pytest.raises(QuantError):
        calibrate(q, x)
    with pytest.raises(QuantError):
        quantize_model(q, calibrate(m, x))
    with pytest.raises(QuantError):
        quantize_model(m, CalibrationProfile())
    with pytest.raises(QuantError):
        calibrate(m, x[:0])
    with pytest.raises(QuantError):
        dequantize_model(m)


def test_self_agreement_is_one(small):
    m, x = small
    labels = np.arange(len(x)) % 2
    res = evaluate(m, x, labels, reference=m)
    assert res.agreement == 1.0
    assert res.confusion.sum() == len(x) == res.total
    assert res.accuracy == np.trace(res.confusion) / res.total


def test_constant_model_on_balanced_set():
    labels = np.array([0, 1] * 50)
    probs = np.tile([0.9, 0.1], (100, 1))
    res = evaluate(None, None, labels, probabilities=probs)
    assert res.accuracy == 0.5
    assert res.confusion.tolist() == [[50, 0], [50, 0]]


def test_evaluate_rejects_bad_labels():
    with pytest.raises(QuantError):
        evaluate(None, None, [], probabilities=np.zeros((0, 2)))
    with pytest.raises(QuantError):
        evaluate(None, None, [2], probabilities=np.zeros((1, 2)))


def test_confusion_matrix_layout():
    cm = confusion_matrix([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    assert cm.tolist() == [[1, 1], [1, 2]]


def test_eval_csv(tmp_path):
    labels = np.array([0, 1, 1, 0])
    probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4], [0.9, 0.1]])
    res = evaluate(None, None, labels, probabilities=probs, reference_probabilities=probs)
    path = tmp_path / "eval.csv"
    write_eval_csv(path, [("head", "int8", res)])
    rows = list(csv.reader(open(path)))
    assert rows[0] == EVAL_CSV_HEADER
    assert rows[1] == ["head", "int8", "0.750000", "2", "0", "1", "1", "1.000000"]


def test_int8_accuracy_close_to_real32(trained, int8_model, test_data, probabilities):
    _, y = test_data
    pr, pq = probabilities
    real = evaluate(trained.model, None, y, probabilities=pr)
    q = evaluate(int8_model, None, y, probabilities=pq, reference_probabilities=pr)
    assert real.accuracy >= 0.95
    assert real.accuracy - q.accuracy <= 0.02
    assert q.agreement >= 0.98

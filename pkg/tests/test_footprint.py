import numpy as np
import pytest

from oracles import brute_force_peak
from tinydrone.nn.footprint import arena_profile, buffer_bytes, memory_footprint, ram_peak
from tinydrone.nn.graph import INPUT_ID, Layer, ModelGraph, Op, build_mobilenet_v2
from tinydrone.tensor import DType


def chain(shapes, dtype=DType.INT8):
    layers = [Layer(Op.RELU6, (i,), i + 1, s) for i, s in enumerate(shapes)]
    return ModelGraph(layers, (96, 96, 3), 2, dtype)


def test_single_identity_layer():
    assert ram_peak(chain([(96, 96, 3)])) == 2 * 27_648 == 55_296


def test_peak_at_a_to_b_step():
    m = chain([(96, 96, 3), (10, 10, 3)])
    prof = arena_profile(m)
    assert prof == [2 * 27_648, 27_648 + 300]
    assert ram_peak(m) == prof[0]


def test_real32_is_four_times_int8():
    assert ram_peak(chain([(96, 96, 3)], DType.REAL32)) == 4 * 55_296


def test_default_model_matches_brute_force(trained, int8_model):
    for m in (trained.model, int8_model):
        steps = [(l.inputs, l.output) for l in m.layers]
        assert ram_peak(m) == brute_force_peak(steps, buffer_bytes(m), INPUT_ID)


def test_footprints_positive_and_int8_smaller(trained, int8_model):
    fr, fq = memory_footprint(trained.model), memory_footprint(int8_model)
    assert fr.flash_bytes > 0 and fr.ram_peak_bytes > 0
    assert fq.flash_bytes < fr.flash_bytes
    assert fq.ram_peak_bytes * 4 == fr.ram_peak_bytes
    assert fr.flash_bytes == pytest.approx(4 * trained.model.param_count(), rel=0.02)


def test_softmax_buffer_is_real32(int8_model):
    sizes = buffer_bytes(int8_model)
    assert sizes[int8_model.output_id] == 2 * 4

import numpy as np
import pytest

from tinydrone.nn.footprint import memory_footprint
from tinydrone.nn.graph import build_mobilenet_v2, dump_graph
from tinydrone.nn.serialize import MAGIC, ParseError, deserialize, load_model, models_equal, save_model, serialize


@pytest.fixture(scope="module")
def small_model():
    return build_mobilenet_v2(input_res=32, seed=4)


def test_round_trip_real32(small_model, tmp_path):
    path = tmp_path / "m.twng"
    n = save_model(small_model, path)
    assert path.stat().st_size == n
    back = load_model(path)
    assert models_equal(small_model, back)
    assert dump_graph(back) == dump_graph(small_model)
    assert memory_footprint(back) == memory_footprint(small_model)
    for a, b in zip(small_model.layers, back.layers):
        if a.weight is not None:
            assert a.weight.data.tobytes() == b.weight.data.tobytes()


def test_round_trip_int8(int8_model):
    back = deserialize(serialize(int8_model))
    assert models_equal(int8_model, back)
    assert back.qparams == int8_model.qparams
    assert serialize(back) == serialize(int8_model)


def test_int8_file_ratio(trained, int8_model):
    ratio = len(serialize(int8_model)) / len(serialize(trained.model))
    assert 0.25 <= ratio <= 0.40


def test_bad_magic_reports_offset_zero(small_model):
    data = bytearray(serialize(small_model))
    data[:4] = b"XXXX"
    with pytest.raises(ParseError) as exc:
        deserialize(bytes(data))
    assert exc.value.offset == 0
    assert serialize(small_model)[:4] == MAGIC


def test_bad_version(small_model):
    data = bytearray(serialize(small_model))
    data[4] = 99
    with pytest.raises(ParseError) as exc:
        deserialize(bytes(data))
    assert exc.value.offset == 4


@pytest.mark.parametrize("cut", [0, 3, 20, 100, -1])
def test_truncation_raises(small_model, cut):
    data = serialize(small_model)
    with pytest.raises(ParseError) as exc:
        deserialize(data[:cut])
    assert 0 <= exc.value.offset <= len(data)


def test_trailing_bytes_rejected(small_model):
    with pytest.raises(ParseError):
        deserialize(serialize(small_model) + b"\0")


def test_random_corruption_never_crashes(small_model):
    data = serialize(small_model)
    rng = np.random.default_rng(0)
    for _ in range(200):
        buf = bytearray(data)
        for i in rng.integers(0, 64, 3):
            buf[i] = rng.integers(0, 256)
        try:
            deserialize(bytes(buf))
        except ParseError:
            pass

from pathlib import Path

import numpy as np
import pytest

from oracles import mobilenet_v2_params, round_channels
from tinydrone.nn import kernels as K
from tinydrone.nn.graph import (
    BlockSpec,
    GraphError,
    INPUT_ID,
    Layer,
    ModelGraph,
    Op,
    build_mobilenet_v2,
    channel_plan,
    dump_graph,
    execute,
    inverted_residual_block,
    make_divisible,
    run_inference,
    topology_hash,
)
from tinydrone.tensor import Tensor

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def default_model():
    return build_mobilenet_v2()


def zero_weights(model):
    for layer in model.layers:
        if layer.weight is not None:
            layer.weight = Tensor(np.zeros_like(layer.weight.data))
            layer.bias = np.zeros_like(layer.bias)
    return model


def test_default_model_size(default_model):
    assert len(default_model.layers) == 100
    assert default_model.param_count() == mobilenet_v2_params(0.35, 2) == 391_650


@pytest.mark.parametrize("width", [0.35, 0.5, 0.75, 1.0, 1.4])
def test_param_count_matches_oracle(width):
    assert build_mobilenet_v2(width, 96, 2).param_count() == mobilenet_v2_params(width, 2)


def test_channel_plan_golden(default_model):
    want = [int(v) for v in (GOLDEN / "channel_plan_w035.txt").read_text().split()]
    assert channel_plan(default_model) == want


def test_make_divisible_agrees_with_oracle():
    for v in np.linspace(1, 500, 997):
        assert make_divisible(v) == round_channels(v)
    assert make_divisible(32 * 0.35) == 16
    assert make_divisible(16 * 0.35) == 8


def test_unscaled_first_stage_has_16_channels():
    m = build_mobilenet_v2(1.0)
    first_project = [l for l in m.layers if l.op is Op.CONV2D][1]
    assert first_project.out_shape[-1] == 16


def test_first_block_has_no_expansion(default_model):
    ops = [l.op for l in default_model.layers[:6]]
    assert ops == [Op.CONV2D, Op.RELU6, Op.DEPTHWISE_CONV2D, Op.RELU6, Op.CONV2D, Op.CONV2D]


@pytest.mark.parametrize("width", [0.35, 1.0])
def test_residual_iff_stride1_and_equal_channels(width):
    m = build_mobilenet_v2(width)
    shapes = m.tensor_shapes()
    producer = {l.output: l for l in m.layers}
    adds = [l for l in m.layers if l.op is Op.RESIDUAL_ADD]
    assert adds
    for add in adds:
        skip, branch = add.inputs
        assert shapes[skip] == shapes[branch]
        assert producer[branch].op is Op.CONV2D
    # walk each block: depthwise -> relu6 -> project; an add reading the projection exists iff
    # the block keeps stride 1 and its input channel count
    consumers = {}
    for l in m.layers:
        for t in l.inputs:
            consumers.setdefault(t, []).append(l)
    for i, l in enumerate(m.layers):
        if l.op is not Op.DEPTHWISE_CONV2D:
            continue
        proj = consumers[consumers[l.output][0].output][0]
        assert proj.op is Op.CONV2D
        expand = m.layers[i - 2]
        is_expand = expand.op is Op.CONV2D and expand.weight.shape[1] == 1
        block_in = expand.inputs[0] if is_expand else l.inputs[0]
        has_add = any(c.op is Op.RESIDUAL_ADD and c.inputs[1] == proj.output
                      for c in consumers.get(proj.output, []))
        keeps = l.stride == 1 and shapes[block_in][-1] == proj.out_shape[-1]
        assert has_add == keeps


@pytest.mark.parametrize("spec,in_c,residual", [
    (BlockSpec(6, 8, 2), 8, False),
    (BlockSpec(6, 8, 1), 8, True),
    (BlockSpec(6, 16, 1), 8, False),
    (BlockSpec(1, 8, 1), 8, True),
])
def test_block_residual_rule(spec, in_c, residual):
    g = inverted_residual_block((12, 12, in_c), spec)
    assert any(l.op is Op.RESIDUAL_ADD for l in g.layers) == residual
    assert (Op.CONV2D in [l.op for l in g.layers[:1]]) == (spec.expansion != 1)


def test_zero_weight_block_is_identity():
    g = zero_weights(inverted_residual_block((10, 10, 8), BlockSpec(6, 8, 1)))
    x = np.random.default_rng(0).uniform(0, 1, (2, 10, 10, 8)).astype(np.float32)
    assert np.array_equal(execute(g, x).data, x)


def test_invalid_block_spec():
    with pytest.raises(GraphError):
        BlockSpec(0, 8, 1)
    with pytest.raises(GraphError):
        BlockSpec(6, 8, 3)


@pytest.mark.parametrize("kw", [dict(width_multiplier=0), dict(width_multiplier=-1),
                                dict(input_res=100), dict(input_res=0), dict(classes=0)])
def test_invalid_build_arguments(kw):
    with pytest.raises(GraphError):
        build_mobilenet_v2(**kw)


def test_zero_model_gives_uniform_probabilities():
    m = zero_weights(build_mobilenet_v2(input_res=32))
    p = run_inference(m, np.zeros((32, 32, 3), np.float32))
    assert p.tolist() == [0.5, 0.5]


def test_inference_is_deterministic_and_normalised():
    m = build_mobilenet_v2(input_res=32, seed=3, init_bound=None)
    x = np.random.default_rng(1).uniform(0, 1, (5, 32, 32, 3)).astype(np.float32)
    a, b = run_inference(m, x), run_inference(m, x, batch_size=2)
    assert np.array_equal(a, run_inference(m, x))
    np.testing.assert_allclose(a, b, atol=1e-5)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(run_inference(m, x[0]), a[0], atol=1e-5)


def test_inference_rejects_wrong_shape(default_model):
    with pytest.raises(K.ShapeError):
        run_inference(default_model, np.zeros((64, 64, 3)))


def test_same_seed_same_weights():
    a, b = build_mobilenet_v2(seed=7), build_mobilenet_v2(seed=7)
    assert all(np.array_equal(x.weight.data, y.weight.data)
               for x, y in zip(a.layers, b.layers) if x.weight is not None)


def test_dump_format(default_model):
    lines = dump_graph(default_model).splitlines()
    assert lines[0] == "input id=0 shape=96x96x3 classes=2"
    assert lines[1] == "000 CONV2D in=0 out=1 in_shape=96x96x3 out_shape=48x48x16 stride=2 pad=same w=16x3x3x3"
    assert lines[-1].startswith("099 SOFTMAX in=99 out=100")
    assert len(lines) == 101


def test_topology_hash_ignores_weights():
    assert topology_hash(build_mobilenet_v2(seed=1)) == topology_hash(build_mobilenet_v2(seed=2))
    assert topology_hash(build_mobilenet_v2()) != topology_hash(build_mobilenet_v2(0.5))


def test_validate_rejects_bad_order():
    l1 = Layer(Op.RELU6, (2,), 1, (4,))
    l2 = Layer(Op.SOFTMAX, (1,), 2, (4,))
    with pytest.raises(GraphError):
        ModelGraph([l1, l2], (4, 4, 1), 4).validate()
    with pytest.raises(GraphError):
        ModelGraph([Layer(Op.RELU6, (INPUT_ID,), 1, (4, 4, 1))], (4, 4, 1), 1).validate()

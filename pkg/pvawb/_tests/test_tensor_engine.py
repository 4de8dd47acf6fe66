"""Test the CPU tensor engine"""

from contextlib import nullcontext as does_not_raise

import numpy
import pytest

from pvawb import net_builders
from pvawb import tensor_engine
from pvawb._tests import common
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape
from pvawb.exceptions import (
    ChoicesError,
    InputFileError,
    NonFiniteValueError,
    ShapeMismatchError,
    UnsupportedKindError,
)


def _every_kind_graph():
    """Small graph with every differentiable kind"""
    nodes = (
        LayerNode("input", LayerKind.INPUT, out_channels=2),
        LayerNode("conv1", LayerKind.CONV, ("input",), kernel=3, pad=1, out_channels=4, bias=True),
        LayerNode("bn1", LayerKind.BATCH_NORM, ("conv1",)),
        LayerNode("neg1", LayerKind.NEGATE, ("bn1",)),
        LayerNode("cat1", LayerKind.CONCAT, ("bn1", "neg1")),
        LayerNode("scale1", LayerKind.SCALE_BIAS, ("cat1",)),
        LayerNode("relu1", LayerKind.RELU, ("scale1",)),
        LayerNode("pool1", LayerKind.MAX_POOL, ("relu1",), kernel=2, stride=2),
        LayerNode("conv2", LayerKind.CONV, ("pool1",), kernel=3, stride=2, pad=1, out_channels=4, groups=2),
        LayerNode("slice1", LayerKind.SLICE, ("pool1",), channel_range=(2, 6)),
        LayerNode("conv3", LayerKind.CONV, ("slice1",), stride=2, out_channels=4),
        LayerNode("add1", LayerKind.ELTWISE_ADD, ("conv2", "conv3")),
        LayerNode("gap", LayerKind.GLOBAL_AVG_POOL, ("add1",)),
        LayerNode("fc", LayerKind.FULLY_CONNECTED, ("gap",), out_channels=3, bias=True),
    )
    return NetworkGraph("every_kind", nodes, input_shape=TensorShape(6, 6, 2))


def _randomize(weights, rng):
    for node, params in weights.items():
        for name, value in params.items():
            if name in ("scale", "gamma", "running_var"):
                weights.set(node, name, rng.uniform(0.5, 1.5, size=value.shape))
            else:
                weights.set(node, name, rng.standard_normal(value.shape))


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = numpy.random.default_rng(seed)
    graph = _every_kind_graph()
    weights = tensor_engine.init_weights(graph, seed=seed)
    _randomize(weights, rng)
    inputs = rng.standard_normal((2, 2, 6, 6))
    projection = rng.standard_normal((2, 3, 1, 1))

    def loss():
        outputs = tensor_engine.forward(graph, weights, inputs, mode="train")
        return float((outputs["fc"] * projection).sum())

    gradients = tensor_engine.backward(graph, weights, inputs, projection)
    for node, params in gradients.weights.items():
        for name, analytic in params.items():
            numeric = common.numeric_gradient(loss, weights[node][name])
            assert common.relative_error(analytic, numeric) <= 1e-6, f"{node} {name}"
    numeric = common.numeric_gradient(loss, inputs)
    assert common.relative_error(gradients.input, numeric) <= 1e-6
    assert set(gradients.weights) == {"conv1", "bn1", "scale1", "conv2", "conv3", "fc"}
    assert set(gradients.weights["bn1"]) == {"gamma", "beta"}


def test_backward_several_outputs(rng):
    graph = _every_kind_graph()
    weights = tensor_engine.init_weights(graph, seed=3)
    inputs = rng.standard_normal((2, 2, 6, 6))
    pooled = tensor_engine.forward(graph, weights, inputs, mode="train")["pool1"]
    only_pool = tensor_engine.backward(graph, weights, inputs, {"pool1": numpy.ones_like(pooled)})
    numpy.testing.assert_array_equal(only_pool.weights["fc"]["weight"], numpy.zeros((3, 4)))
    numpy.testing.assert_array_equal(only_pool.weights["conv2"]["weight"], numpy.zeros((4, 4, 3, 3)))
    assert numpy.any(only_pool.weights["conv1"]["weight"] != 0.0)


def test_backward_loss_gradient_shape(rng):
    graph = _every_kind_graph()
    weights = tensor_engine.init_weights(graph)
    with pytest.raises(ShapeMismatchError):
        tensor_engine.backward(graph, weights, rng.standard_normal((2, 2, 6, 6)), numpy.ones((2, 3)))


def test_backward_forward_only_kinds():
    graph = NetworkGraph(
        "up",
        (
            LayerNode("input", LayerKind.INPUT),
            LayerNode("up", LayerKind.DECONV, ("input",), kernel=4, stride=2, pad=1, out_channels=2, groups=2),
        ),
        input_shape=TensorShape(4, 4, 2),
    )
    weights = tensor_engine.init_weights(graph)
    with pytest.raises(UnsupportedKindError):
        tensor_engine.backward(graph, weights, numpy.ones((1, 2, 4, 4)), numpy.ones((1, 2, 8, 8)))


def test_bilinear_deconv_upsamples_constants():
    graph = NetworkGraph(
        "up",
        (
            LayerNode("input", LayerKind.INPUT),
            LayerNode("up", LayerKind.DECONV, ("input",), kernel=4, stride=2, pad=1, out_channels=3, groups=3),
        ),
        input_shape=TensorShape(4, 4, 3),
    )
    numpy.testing.assert_allclose(tensor_engine.bilinear_kernel(4)[0], [0.0625, 0.1875, 0.1875, 0.0625])
    weights = tensor_engine.init_weights(graph)
    output = tensor_engine.forward(graph, weights, numpy.ones((1, 3, 4, 4)))["up"]
    assert output.shape == (1, 3, 8, 8)
    numpy.testing.assert_allclose(output[:, :, 1:-1, 1:-1], 1.0)
    numpy.testing.assert_allclose(output[:, :, 0, 1:-1], 0.75)


def test_crelu_pair_is_exact(rng):
    graph = net_builders.build_toy_crelu_net("crelu")
    weights = tensor_engine.init_weights(graph, seed=5)
    activations = tensor_engine.forward(graph, weights, rng.standard_normal((160, 1, 8, 8)))
    crelu = activations["crelu1"]
    convolution = activations["crelu1/2/conv"]
    assert convolution.size >= 10**4
    positive, negative = crelu[:, :4], crelu[:, 4:]
    numpy.testing.assert_array_equal(positive * negative, numpy.zeros_like(convolution))
    numpy.testing.assert_array_equal(positive + negative, numpy.abs(convolution))
    numpy.testing.assert_array_equal(positive - negative, convolution)


def test_batch_norm_modes(rng):
    graph = NetworkGraph(
        "bn",
        (LayerNode("input", LayerKind.INPUT), LayerNode("bn", LayerKind.BATCH_NORM, ("input",))),
        input_shape=TensorShape(5, 5, 3),
    )
    weights = tensor_engine.init_weights(graph)
    weights.set("bn", "gamma", numpy.array([1.0, 2.0, 0.5]))
    weights.set("bn", "beta", numpy.array([0.0, -1.0, 3.0]))
    inputs = rng.normal(4.0, 3.0, size=(4, 3, 5, 5))

    train = tensor_engine.forward(graph, weights, inputs, mode="train")
    numpy.testing.assert_allclose(train["bn"].mean(axis=(0, 2, 3)), [0.0, -1.0, 3.0], atol=1e-12)
    numpy.testing.assert_allclose(train["bn"].std(axis=(0, 2, 3)), [1.0, 2.0, 0.5], rtol=1e-4)

    inference = tensor_engine.forward(graph, weights, inputs, mode="inference")
    expected = inputs / numpy.sqrt(1.0 + 1e-5) * numpy.array([1.0, 2.0, 0.5])[None, :, None, None]
    numpy.testing.assert_allclose(inference["bn"], expected + numpy.array([0.0, -1.0, 3.0])[None, :, None, None])

    tensor_engine.update_running_statistics(graph, weights, train, momentum=0.5)
    numpy.testing.assert_allclose(weights.get("bn", "running_mean"), 0.5 * inputs.mean(axis=(0, 2, 3)))
    numpy.testing.assert_allclose(weights.get("bn", "running_var"), 0.5 + 0.5 * inputs.var(axis=(0, 2, 3)))


def test_fold_batchnorm(rng):
    graph = net_builders.build_mcrelu_block(net_builders.McReluSpec(8, 4, 4, 16), input_shape=TensorShape(5, 5, 8))
    weights = tensor_engine.init_weights(graph, seed=2)
    _randomize(weights, rng)
    folded_graph, folded_weights = tensor_engine.fold_batchnorm(graph, weights)

    assert not any(node.kind is LayerKind.BATCH_NORM for node in folded_graph)
    assert folded_graph.node("block/2/bn").kind is LayerKind.CONV
    assert folded_graph.node("block/1/bn").kind is LayerKind.SCALE_BIAS
    assert "block/1/conv" not in folded_graph
    assert "block/1/conv" not in folded_weights

    inputs = rng.standard_normal((2, 8, 5, 5))
    expected = tensor_engine.forward(graph, weights, inputs)["block"]
    actual = tensor_engine.forward(folded_graph, folded_weights, inputs)["block"]
    numpy.testing.assert_allclose(actual, expected, rtol=1e-10, atol=1e-10)


def test_roi_pool():
    features = numpy.arange(64, dtype=float).reshape(1, 8, 8)
    pooled = tensor_engine.roi_pool(features, [[0, 0, 7, 7]], output_size=(2, 2), spatial_scale=1.0)
    numpy.testing.assert_array_equal(pooled[0, 0], [[27.0, 31.0], [59.0, 63.0]])

    pooled = tensor_engine.roi_pool(features, [[0, 0, 127, 127]], output_size=(2, 2))
    numpy.testing.assert_array_equal(pooled[0, 0], [[36.0, 39.0], [60.0, 63.0]])


def test_roi_pool_empty_bin_warns():
    features = numpy.arange(64, dtype=float).reshape(1, 8, 8)
    with pytest.warns(UserWarning):
        pooled = tensor_engine.roi_pool(features, [[200, 200, 300, 300]], output_size=(2, 2))
    numpy.testing.assert_array_equal(pooled[0, 0], numpy.full((2, 2), 63.0))


def test_roi_pool_forward_node(rng):
    graph = NetworkGraph(
        "roi_head",
        (
            LayerNode("convf", LayerKind.INPUT, out_channels=2),
            LayerNode("roi_pool", LayerKind.ROI_POOL, ("convf",), kernel=2, spatial_scale=1.0 / 16.0),
            LayerNode("fc", LayerKind.FULLY_CONNECTED, ("roi_pool",), out_channels=3, bias=True),
        ),
        input_shape=TensorShape(4, 4, 2),
    )
    weights = tensor_engine.init_weights(graph, seed=4)
    features = rng.standard_normal((1, 2, 4, 4))
    rois = [[0, 0, 63, 63], [16, 16, 48, 40]]
    outputs = tensor_engine.forward(graph, weights, features, rois=rois)
    assert outputs["roi_pool"].shape == (2, 2, 2, 2)
    assert outputs["fc"].shape == (2, 3, 1, 1)
    numpy.testing.assert_array_equal(outputs["roi_pool"][0, :, 1, 1], features[0, :, 2:, 2:].max(axis=(1, 2)))
    with pytest.raises(ShapeMismatchError):
        tensor_engine.forward(graph, weights, features)


forward_errors = {
    "unknown mode": ((1, 2, 6, 6), "fuzzy", None, pytest.raises(ChoicesError)),
    "not four dimensional": ((2, 6, 6), "inference", None, pytest.raises(ShapeMismatchError)),
    "channel mismatch": ((1, 3, 6, 6), "inference", None, pytest.raises(ShapeMismatchError)),
    "not finite": ((1, 2, 6, 6), "inference", numpy.nan, pytest.raises(NonFiniteValueError)),
    "train": ((1, 2, 6, 6), "train", None, does_not_raise()),
}


@pytest.mark.parametrize(
    "shape, mode, fill, outcome",
    forward_errors.values(),
    ids=forward_errors.keys(),
)
def test_forward_errors(shape, mode, fill, outcome):
    graph = _every_kind_graph()
    weights = tensor_engine.init_weights(graph)
    inputs = numpy.ones(shape)
    if fill is not None:
        inputs[0, 0, 0, 0] = fill
    with outcome:
        outputs = tensor_engine.forward(graph, weights, inputs, mode=mode)
        assert outputs["fc"].shape == (1, 3, 1, 1)


def test_forward_parameter_shape(rng):
    graph = _every_kind_graph()
    weights = tensor_engine.init_weights(graph)
    weights.set("conv1", "weight", numpy.zeros((4, 2, 5, 5)))
    with pytest.raises(ShapeMismatchError):
        tensor_engine.forward(graph, weights, rng.standard_normal((1, 2, 6, 6)))


def test_forward_is_deterministic(rng):
    graph = net_builders.build_inception_chain(depth=2, size=12)
    weights = tensor_engine.init_weights(graph, seed=9)
    inputs = rng.standard_normal((2, 8, 12, 12))
    first = tensor_engine.forward(graph, weights, inputs)
    second = tensor_engine.forward(graph, weights, inputs)
    numpy.testing.assert_array_equal(first["inception2"], second["inception2"])

    single = tensor_engine.forward(graph, weights, inputs, dtype=numpy.float32)["inception2"]
    assert single.dtype == numpy.float32
    numpy.testing.assert_allclose(single, first["inception2"], rtol=1e-3, atol=1e-3)


def test_softmax_cross_entropy(rng):
    logits = rng.standard_normal((4, 3))
    labels = numpy.array([0, 2, 1, 2])
    loss, gradient = tensor_engine.softmax_cross_entropy(logits, labels)
    probabilities = tensor_engine.softmax(logits)
    numpy.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
    assert loss == pytest.approx(-numpy.log(probabilities[numpy.arange(4), labels]).mean())
    numeric = common.numeric_gradient(lambda: tensor_engine.softmax_cross_entropy(logits, labels)[0], logits)
    assert common.relative_error(gradient, numeric) < 1e-7

    _, shaped = tensor_engine.softmax_cross_entropy(logits.reshape(4, 3, 1, 1), labels)
    assert shaped.shape == (4, 3, 1, 1)


softmax_labels = {
    "label out of range": (numpy.array([0, 3]), pytest.raises(ShapeMismatchError)),
    "negative label": (numpy.array([0, -1]), pytest.raises(ShapeMismatchError)),
    "wrong batch": (numpy.array([0, 1, 2]), pytest.raises(ShapeMismatchError)),
    "valid": (numpy.array([0, 2]), does_not_raise()),
}


@pytest.mark.parametrize(
    "labels, outcome",
    softmax_labels.values(),
    ids=softmax_labels.keys(),
)
def test_softmax_cross_entropy_labels(labels, outcome):
    with outcome:
        loss, _ = tensor_engine.softmax_cross_entropy(numpy.zeros((2, 3)), labels)
        assert loss == pytest.approx(numpy.log(3.0))


def test_weight_store_file(tmp_path, rng):
    store = tensor_engine.WeightStore(
        params={"conv": {"weight": rng.standard_normal((2, 1, 3, 3)), "bias": numpy.zeros(2)}},
        meta={"conv": {"rank": 2, "tail": 0.5}},
    )
    path = tmp_path / "weights.bin"
    store.save(path)
    loaded = tensor_engine.WeightStore.load(path)
    assert loaded.nodes == ["conv"]
    assert loaded.meta == {"conv": {"rank": 2, "tail": 0.5}}
    numpy.testing.assert_array_equal(loaded.get("conv", "weight"), store.get("conv", "weight"))
    with pytest.raises(ShapeMismatchError):
        loaded.get("conv", "scale")

    copy = store.copy()
    copy.get("conv", "bias")[0] = 1.0
    assert store.get("conv", "bias")[0] == 0.0


weight_store_files = {
    "missing": (None, pytest.raises(InputFileError)),
    "truncated length": (b"\x01\x02", pytest.raises(InputFileError)),
    "not json": (numpy.array([4], dtype="<u8").tobytes() + b"nope", pytest.raises(InputFileError)),
    "data too short": (
        numpy.array([56], dtype="<u8").tobytes() + b'{"nodes": {"a": {"w": {"offset": 0, "shape": [2]}}}}    ',
        pytest.raises(InputFileError),
    ),
    "empty store": (numpy.array([13], dtype="<u8").tobytes() + b'{"nodes": {}}', does_not_raise()),
}


@pytest.mark.parametrize(
    "content, outcome",
    weight_store_files.values(),
    ids=weight_store_files.keys(),
)
def test_weight_store_load_errors(content, outcome, tmp_path):
    path = tmp_path / "weights.bin"
    if content is not None:
        path.write_bytes(content)
    with outcome:
        assert len(tensor_engine.WeightStore.load(path)) == 0

"""Test the compress subcommand"""

import json

import pytest

from pvawb import _compress
from pvawb import net_builders
from pvawb import tensor_engine
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape, load_graph, save_graph
from pvawb.exceptions import APIError, MissingHeadError


def test_main_graph_only(tmp_path, capsys):
    graph_file = tmp_path / "classifier.json"
    output_file = tmp_path / "classifier_L.json"
    _, classifier = net_builders.build_detection_heads()
    save_graph(classifier, graph_file)

    _compress.main(graph_file, output_file=output_file, json_output=True)

    report = json.loads(capsys.readouterr().out)
    assert report["macs"] == {"dense": 92_704_768, "factorized": 16_158_720}
    assert report["layers"]["fc6"] == {"dense_macs": 75_497_472, "factorized_macs": 11_534_336}
    assert report["layers"]["fc7"] == {"dense_macs": 16_777_216, "factorized_macs": 4_194_304}
    rewritten = load_graph(output_file)
    assert rewritten.node("fc6_L").out_channels == 512


def test_main_with_weights(tmp_path, capsys):
    nodes = (
        LayerNode("input", LayerKind.INPUT, out_channels=3),
        LayerNode("fc1", LayerKind.FULLY_CONNECTED, ("input",), out_channels=6, bias=True),
        LayerNode("relu1", LayerKind.RELU, ("fc1",)),
        LayerNode("fc2", LayerKind.FULLY_CONNECTED, ("relu1",), out_channels=4, bias=True),
    )
    graph = NetworkGraph("head", nodes, input_shape=TensorShape(2, 2, 3))
    graph_file = tmp_path / "head.json"
    weights_file = tmp_path / "head.weights"
    output_weights = tmp_path / "head_L.weights"
    save_graph(graph, graph_file)
    tensor_engine.init_weights(graph, seed=2).save(weights_file)

    _compress.main(graph_file, rank=2, layers=["fc1"], weights_file=weights_file, output_weights=output_weights)

    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "head: rank 2, 96 -> 60 MAC"
    assert lines[1].startswith("fc1: 72 -> 36 MAC, reconstruction error ")
    store = tensor_engine.WeightStore.load(output_weights)
    assert store.get("fc1_L", "weight").shape == (2, 12)
    assert store.meta["fc1"]["rank"] == 2


def test_main_errors(tmp_path, pvanet_file):
    with pytest.raises(APIError):
        _compress.main(pvanet_file, output_weights=tmp_path / "out.weights")
    with pytest.raises(MissingHeadError):
        _compress.main(pvanet_file)

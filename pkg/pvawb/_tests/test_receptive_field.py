"""Test receptive field distributions"""

from contextlib import nullcontext as does_not_raise

import pytest

from pvawb import net_builders
from pvawb import receptive_field
from pvawb._tests import common
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape
from pvawb.receptive_field import RfState
from pvawb.exceptions import InvalidSpecError, PathExplosionError, UnsupportedKindError


path_rf = {
    "empty": ([], RfState(1, 1)),
    "two 3x3": ([(3, 1), (3, 1)], RfState(5, 1)),
    "strided 7x7": ([(7, 2)], RfState(7, 2)),
    "stem": ([(7, 2), (3, 2), (3, 1)], RfState(19, 4)),
    "1x1 inserted": ([(7, 2), (1, 1), (3, 2), (1, 1), (3, 1)], RfState(19, 4)),
    "two pools": ([(2, 2), (2, 2)], RfState(4, 4)),
}


@pytest.mark.parametrize(
    "layers, expected",
    path_rf.values(),
    ids=path_rf.keys(),
)
def test_path_rf(layers, expected):
    assert receptive_field.path_rf(layers) == expected


def test_path_rf_ignores_inserted_1x1(rng):
    for _ in range(100):
        depth = int(rng.integers(1, 8))
        layers = [(int(rng.integers(1, 8)), int(rng.integers(1, 4))) for _ in range(depth)]
        inserted = list(layers)
        for _ in range(int(rng.integers(1, 5))):
            inserted.insert(int(rng.integers(0, len(inserted) + 1)), (1, 1))
        assert receptive_field.path_rf(inserted) == receptive_field.path_rf(layers)


rf_states = {
    "default": ((1, 1), does_not_raise()),
    "zero rf": ((0, 1), pytest.raises(InvalidSpecError)),
    "zero jump": ((3, 0), pytest.raises(InvalidSpecError)),
}


@pytest.mark.parametrize(
    "fields, outcome",
    rf_states.values(),
    ids=rf_states.keys(),
)
def test_rf_state(fields, outcome):
    with outcome:
        state = RfState(*fields)
        with pytest.raises(InvalidSpecError):
            state.apply(0, 1)


def test_rf_state_transposed():
    assert RfState(11, 4).apply_transposed(4, 2) == RfState(15, 2)
    with pytest.raises(UnsupportedKindError):
        RfState(11, 4).apply_transposed(3, 3)


def test_inception_chain_distribution():
    graph = net_builders.build_inception_chain(depth=3)
    distribution = receptive_field.rf_distribution(graph, "inception3")
    assert distribution.total_paths == 27
    assert distribution.min == 1
    assert distribution.max == 13
    assert distribution.counts() == {1: 1, 3: 3, 5: 6, 7: 7, 9: 6, 11: 3, 13: 1}
    assert distribution.mean == pytest.approx(7.0)

    data = distribution.to_dict()
    assert data["total_paths"] == 27
    assert data["entries"][0] == [1, 1]

    histogram = distribution.histogram(width=10).splitlines()
    assert histogram[0] == "inception3: 27 paths, rf min 1, max 13, mean 7.00"
    assert len(histogram) == 8
    assert histogram[4].endswith("#" * 10)


def test_enumerate_paths_agrees_with_counting():
    graph = net_builders.build_inception_chain(depth=2)
    paths = receptive_field.enumerate_paths(graph, "inception2")
    distribution = receptive_field.rf_distribution(graph, "inception2")
    assert len(paths) == distribution.total_paths == 9
    assert all(path[0] == "input" and path[-1] == "inception2" for path in paths)
    counts = {}
    for path in paths:
        rf = receptive_field.path_state(graph, path).rf
        counts[rf] = counts.get(rf, 0) + 1
    assert counts == distribution.counts()
    with pytest.raises(PathExplosionError):
        receptive_field.enumerate_paths(graph, "inception2", max_paths=4)


def test_crelu_halves_are_one_path():
    graph = net_builders.build_toy_crelu_net("mcrelu")
    distribution = receptive_field.rf_distribution(graph, "pool1")
    assert distribution.entries == ((4, 1),)
    with pytest.raises(UnsupportedKindError):
        receptive_field.rf_distribution(graph, "fc")


def test_pvanet_distribution(pvanet_graph):
    distribution = receptive_field.rf_distribution(pvanet_graph, "convf", max_paths=None)
    assert distribution.total_paths == 13_148_288
    assert distribution.min == 11
    assert distribution.entries == tuple(sorted(distribution.entries))
    with pytest.raises(PathExplosionError):
        receptive_field.rf_distribution(pvanet_graph, "convf")


def test_rf_distribution_missing_node(pvanet_graph):
    with pytest.raises(KeyError):
        receptive_field.rf_distribution(pvanet_graph, "conv6_1")


empirical_chains = {
    "3x3": ([("conv", 3, 1)], 3),
    "two 3x3": ([("conv", 3, 1), ("conv", 3, 1)], 5),
    "strided stem with pool": ([("conv", 5, 2), ("pool", 2, 2), ("conv", 3, 1)], 15),
    "1x1 then strided": ([("conv", 1, 1), ("conv", 3, 2), ("conv", 3, 2)], 7),
    "two pools": ([("pool", 2, 2), ("pool", 2, 2)], 4),
    "wide": ([("conv", 5, 2), ("conv", 5, 2), ("conv", 5, 1)], 29),
}


@pytest.mark.parametrize(
    "layers, expected",
    empirical_chains.values(),
    ids=empirical_chains.keys(),
)
def test_empirical_rf_matches_analytic(layers, expected):
    graph = common.chain_graph(layers, size=64)
    node = f"layer{len(layers)}"
    analytic = receptive_field.rf_distribution(graph, node)
    assert analytic.entries == ((expected, 1),)
    assert receptive_field.path_rf((kernel, stride) for _, kernel, stride in layers).rf == expected
    assert receptive_field.empirical_rf(graph, node, threads=2) == expected


def test_empirical_rf_threads_agree():
    graph = net_builders.build_inception_chain(depth=2, size=24)
    single = receptive_field.empirical_rf(graph, "inception2", threads=1)
    pooled = receptive_field.empirical_rf(graph, "inception2", threads=4)
    assert single == pooled == receptive_field.rf_distribution(graph, "inception2").max


def _random_branch_graph(rng, size=48):
    """Strided stem, two or three parallel conv stacks merged by Concat or EltwiseAdd, strided head"""

    def conv(name, source, stride=1):
        kernel = int(rng.choice([1, 3, 5]))
        return LayerNode(name, LayerKind.CONV, (source,), kernel=kernel, stride=stride, pad=kernel // 2, out_channels=1)

    nodes = [LayerNode("input", LayerKind.INPUT, out_channels=1), conv("stem", "input", stride=int(rng.integers(1, 3)))]
    ends = []
    for branch in range(int(rng.integers(2, 4))):
        source = "stem"
        for depth in range(int(rng.integers(1, 4))):
            name = f"branch{branch}/conv{depth}"
            nodes.append(conv(name, source))
            source = name
        ends.append(source)
    kind = LayerKind.CONCAT if rng.integers(0, 2) else LayerKind.ELTWISE_ADD
    nodes.append(LayerNode("merge", kind, tuple(ends)))
    nodes.append(conv("head", "merge", stride=int(rng.integers(1, 3))))
    return NetworkGraph("branches", tuple(nodes), input_shape=TensorShape(size, size, 1))


def test_empirical_rf_matches_analytic_on_branches(rng):
    for _ in range(10):
        graph = _random_branch_graph(rng)
        analytic = receptive_field.rf_distribution(graph, "head")
        assert receptive_field.empirical_rf(graph, "head", threads=2) == analytic.max

"""External API module for receptive field analysis

Every path from the graph input to a node has a receptive field that follows the recurrence
``rf <- rf + (k - 1) * jump`` and ``jump <- jump * stride`` over the spatial layers on the path. Convolutions and
max pooling share the recurrence. Pass-through layers leave the state unchanged.

Paths are counted by dynamic programming over ``(rf, jump)`` states, so networks with millions of paths are analyzed
without enumerating them. Concat and element-wise add inputs that reach the same producer through pass-through layers
count as one path, e.g. the two halves of a C.ReLU.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import math
import typing
import collections
import dataclasses
import concurrent.futures

import numpy

from pvawb import _settings
from pvawb import _utilities
from pvawb import tensor_engine
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, PASS_THROUGH_KINDS, TensorShape, infer_shapes
from pvawb.exceptions import InvalidSpecError, PathExplosionError, UnsupportedKindError


_exclude_from_namespace = set(globals().keys())


@dataclasses.dataclass(frozen=True, order=True)
class RfState:
    """Receptive field of one path

    :param rf: input pixels covered along one axis
    :param jump: input pixels between adjacent output positions

    :raises InvalidSpecError: If ``rf`` or ``jump`` is smaller than one
    """

    rf: int = 1
    jump: int = 1

    def __post_init__(self) -> None:
        if self.rf < 1 or self.jump < 1:
            raise InvalidSpecError(f"Receptive field state requires rf >= 1 and jump >= 1, got {self.rf}, {self.jump}")

    def apply(self, kernel: int, stride: int) -> "RfState":
        """State after a ``kernel`` x ``kernel`` layer with ``stride``"""
        if kernel < 1 or stride < 1:
            raise InvalidSpecError(f"Kernel {kernel} and stride {stride} must be positive")
        return RfState(self.rf + (kernel - 1) * self.jump, self.jump * stride)

    def apply_transposed(self, kernel: int, stride: int) -> "RfState":
        """State after an up-scaling deconvolution

        :raises UnsupportedKindError: If the stride does not divide the current jump
        """
        if self.jump % stride:
            raise UnsupportedKindError(f"Deconvolution stride {stride} does not divide the input jump {self.jump}")
        return RfState(self.rf + (math.ceil(kernel / stride) - 1) * self.jump, self.jump // stride)


def path_rf(layers: typing.Iterable[typing.Tuple[int, int]]) -> RfState:
    """Receptive field of a chain of ``(kernel, stride)`` layers

    >>> path_rf([(3, 1), (3, 1)])
    RfState(rf=5, jump=1)

    :param layers: ``(kernel, stride)`` pairs from the input towards the output

    :returns: final state, starting from ``RfState(1, 1)``
    """
    state = RfState()
    for kernel, stride in layers:
        state = state.apply(kernel, stride)
    return state


def _node_state(node: LayerNode, state: RfState) -> RfState:
    if node.kind in (LayerKind.CONV, LayerKind.MAX_POOL):
        return state.apply(node.kernel[1], node.stride)
    if node.kind is LayerKind.DECONV:
        return state.apply_transposed(node.kernel[1], node.stride)
    return state


def _check_kind(node: LayerNode) -> None:
    if node.kind in (LayerKind.FULLY_CONNECTED, LayerKind.ROI_POOL, LayerKind.GLOBAL_AVG_POOL):
        raise UnsupportedKindError(f"Node '{node.name}' of kind {node.kind} has no spatial receptive field")


@dataclasses.dataclass(frozen=True)
class RfDistribution:
    """Multiset of per-path receptive field sizes

    :param node: analyzed node
    :param entries: ``(rf, path count)`` pairs sorted by ``rf``
    """

    node: str
    entries: typing.Tuple[typing.Tuple[int, int], ...]

    @property
    def total_paths(self) -> int:
        return sum(count for _, count in self.entries)

    @property
    def min(self) -> int:
        return self.entries[0][0]

    @property
    def max(self) -> int:
        return self.entries[-1][0]

    @property
    def mean(self) -> float:
        """Expected receptive field with every path weighted equally"""
        return sum(rf * count for rf, count in self.entries) / self.total_paths

    def counts(self) -> typing.Dict[int, int]:
        return dict(self.entries)

    def histogram(self, width: int = _settings._histogram_width) -> str:
        """Text histogram with one bar per receptive field size, scaled to the largest count"""
        largest = max(count for _, count in self.entries)
        label_width = len(str(self.max))
        count_width = len(str(largest))
        lines = [f"{self.node}: {self.total_paths} paths, rf min {self.min}, max {self.max}, mean {self.mean:.2f}"]
        for rf, count in self.entries:
            bar = "#" * max(1, round(width * count / largest))
            lines.append(f"{rf:>{label_width}} | {count:>{count_width}} {bar}")
        return "\n".join(lines)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "node": self.node,
            "total_paths": self.total_paths,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "entries": [[rf, count] for rf, count in self.entries],
        }


def _ancestors(graph: NetworkGraph, node: str) -> typing.Set[str]:
    if node not in graph:
        raise KeyError(f"Graph '{graph.name}' has no node named '{node}'")
    ancestors = {node}
    for candidate in reversed(graph.nodes):
        if candidate.name in ancestors:
            ancestors.update(candidate.inputs)
    return ancestors


def _producer(graph: NetworkGraph, name: str, cache: typing.Dict[str, str]) -> str:
    """First node upstream of ``name`` that is not a pass-through layer"""
    if name not in cache:
        node = graph.node(name)
        cache[name] = _producer(graph, node.inputs[0], cache) if node.kind in PASS_THROUGH_KINDS else name
    return cache[name]


def _merged_inputs(graph: NetworkGraph, node: LayerNode, cache: typing.Dict[str, str]) -> typing.List[str]:
    """Inputs of a node with inputs sharing a producer collapsed onto the first of them"""
    seen: typing.Dict[str, str] = {}
    for source in node.inputs:
        seen.setdefault(_producer(graph, source, cache), source)
    return list(seen.values())


def rf_distribution(
    graph: NetworkGraph, node: str, max_paths: typing.Optional[int] = _settings._default_max_paths
) -> RfDistribution:
    """Distribution of receptive field sizes over every input-to-node path

    :param graph: graph in topological order
    :param node: analyzed node
    :param max_paths: path count cap. ``None`` counts without a cap.

    :returns: distribution

    :raises KeyError: If the node does not exist
    :raises PathExplosionError: If the path count exceeds ``max_paths``
    :raises UnsupportedKindError: If a path crosses a layer without a spatial receptive field
    """
    needed = _ancestors(graph, node)
    producers: typing.Dict[str, str] = {}
    states: typing.Dict[str, typing.Counter[RfState]] = {}
    for current in graph.nodes:
        if current.name not in needed or current.name in states:
            continue
        _check_kind(current)
        if current.kind is LayerKind.INPUT:
            states[current.name] = collections.Counter({RfState(): 1})
            continue
        merged: typing.Counter[RfState] = collections.Counter()
        for source in _merged_inputs(graph, current, producers):
            for state, count in states[source].items():
                merged[_node_state(current, state)] += count
        states[current.name] = merged
    entries: typing.Counter[int] = collections.Counter()
    for state, count in states[node].items():
        entries[state.rf] += count
    distribution = RfDistribution(node=node, entries=tuple(sorted(entries.items())))
    if max_paths is not None and distribution.total_paths > max_paths:
        raise PathExplosionError(
            f"Node '{node}' has {distribution.total_paths} input paths, more than the cap of {max_paths}"
        )
    return distribution


def enumerate_paths(
    graph: NetworkGraph, node: str, max_paths: typing.Optional[int] = _settings._default_max_paths
) -> typing.List[typing.Tuple[str, ...]]:
    """List every input-to-node path explicitly

    Paths follow the same merging rule as :meth:`rf_distribution`, so their count equals its ``total_paths``.

    :param graph: graph in topological order
    :param node: path end node
    :param max_paths: path count cap. ``None`` enumerates without a cap.

    :returns: node name tuples from the input to ``node``

    :raises PathExplosionError: If the path count exceeds ``max_paths``
    """
    needed = _ancestors(graph, node)
    producers: typing.Dict[str, str] = {}
    paths: typing.Dict[str, typing.List[typing.Tuple[str, ...]]] = {}
    for current in graph.nodes:
        if current.name not in needed or current.name in paths:
            continue
        _check_kind(current)
        if current.kind is LayerKind.INPUT:
            paths[current.name] = [(current.name,)]
            continue
        sources = _merged_inputs(graph, current, producers)
        extended = [path + (current.name,) for source in sources for path in paths[source]]
        if max_paths is not None and len(extended) > max_paths:
            raise PathExplosionError(f"Node '{current.name}' has more than {max_paths} input paths")
        paths[current.name] = extended
    return paths[node]


def path_state(graph: NetworkGraph, path: typing.Sequence[str]) -> RfState:
    """Receptive field of an explicit path of node names"""
    state = RfState()
    for name in path:
        state = _node_state(graph.node(name), state)
    return state


def surrogate_weights(
    graph: NetworkGraph, input_shape: typing.Optional[TensorShape] = None
) -> "tensor_engine.WeightStore":
    """All-positive averaging weights with zero biases

    Every convolution, deconvolution and fully-connected weight is ``1 / fan_in``, so a zero image stays exactly zero
    and any positive perturbation reaches every output inside its receptive field.
    """
    store = tensor_engine.init_weights(graph, input_shape)
    for name, params in store.items():
        if "weight" in params:
            weight = params["weight"]
            fan_in = weight[0].size
            params["weight"] = numpy.full(weight.shape, 1.0 / fan_in)
        if "bias" in params:
            params["bias"] = numpy.zeros_like(params["bias"])
    return store


def empirical_rf(
    graph: NetworkGraph,
    node: str,
    position: typing.Optional[typing.Tuple[int, int]] = None,
    input_shape: typing.Optional[TensorShape] = None,
    threads: typing.Optional[int] = None,
) -> int:
    """Measure the receptive field width of one output position by perturbing input columns

    The engine runs the graph in inference mode with :meth:`surrogate_weights` on a zero image with one full column
    raised by a large constant, once per input column. The result is the span of the columns that change the chosen
    output position. Columns run on a thread pool capped by ``threads``.

    :param graph: graph without ``RoiPool``, ``FullyConnected`` or ``GlobalAvgPool`` nodes on the analyzed paths
    :param node: measured node
    :param position: ``(row, column)`` output position, defaults to the center of the node's output
    :param input_shape: input shape, defaults to the graph input shape
    :param threads: worker threads, defaults to the ``PVAWB_THREADS`` cap

    :returns: support width in input pixels, zero when no column reaches the position
    """
    shapes = infer_shapes(graph, input_shape)
    input_shape = shapes[graph.input_name]
    output = shapes[node]
    row, column = (output.height // 2, output.width // 2) if position is None else position
    weights = surrogate_weights(graph, input_shape)
    threads = _utilities.thread_count() if threads is None else threads

    def _reaches(input_column: int) -> bool:
        image = numpy.zeros((1, input_shape.channels, input_shape.height, input_shape.width))
        image[:, :, :, input_column] = _settings._empirical_perturbation
        activations = tensor_engine.forward(graph, weights, image, mode="inference")
        return bool(numpy.any(activations[node][0, :, row, column] != 0.0))

    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        reached = list(executor.map(_reaches, range(input_shape.width)))
    columns = [index for index, flag in enumerate(reached) if flag]
    if not columns:
        return 0
    return columns[-1] - columns[0] + 1


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

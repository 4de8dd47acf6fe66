"""External API module for the layer-graph intermediate representation

Defines the layer kinds, the immutable node and graph types, JSON serialization, shape inference, and structural
validation used by every other module.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import enum
import json
import typing
import pathlib
import dataclasses
import collections

import networkx

from pvawb import _settings
from pvawb.exceptions import (
    ChannelMismatchError,
    GraphValidationError,
    GroupMismatchError,
    NegativeDimensionError,
    InputFileError,
    UnsupportedKindError,
)


_exclude_from_namespace = set(globals().keys())


class LayerKind(str, enum.Enum):
    """Layer kinds understood by the workbench. Values are the names used in graph description files."""

    INPUT = "Input"
    CONV = "Conv"
    DECONV = "Deconv"
    MAX_POOL = "MaxPool"
    CONCAT = "Concat"
    NEGATE = "Negate"
    SCALE_BIAS = "ScaleBias"
    RELU = "ReLU"
    BATCH_NORM = "BatchNorm"
    FULLY_CONNECTED = "FullyConnected"
    ROI_POOL = "RoiPool"
    ELTWISE_ADD = "EltwiseAdd"
    SLICE = "Slice"
    GLOBAL_AVG_POOL = "GlobalAvgPool"

    def __str__(self) -> str:
        return self.value


#: Kinds with a kernel, stride, and padding applied over the spatial dimensions
SPATIAL_KINDS = frozenset({LayerKind.CONV, LayerKind.DECONV, LayerKind.MAX_POOL})

#: Kinds that carry ``out_channels``
CHANNEL_KINDS = frozenset({LayerKind.CONV, LayerKind.DECONV, LayerKind.FULLY_CONNECTED})

#: Kinds that accept more than one input
MULTI_INPUT_KINDS = frozenset({LayerKind.CONCAT, LayerKind.ELTWISE_ADD})

#: Single-input kinds that leave the spatial layout of their input untouched
PASS_THROUGH_KINDS = frozenset(
    {LayerKind.NEGATE, LayerKind.SCALE_BIAS, LayerKind.RELU, LayerKind.BATCH_NORM, LayerKind.SLICE}
)


@dataclasses.dataclass(frozen=True)
class TensorShape:
    """Single image activation shape ``height x width x channels``

    :param height: rows in pixels
    :param width: columns in pixels
    :param channels: feature channels

    :raises NegativeDimensionError: If any field is smaller than one
    """

    height: int
    width: int
    channels: int

    def __post_init__(self) -> None:
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if int(value) != value or value < 1:
                raise NegativeDimensionError(f"TensorShape {field.name} must be a positive integer, got '{value}'")

    def __str__(self) -> str:
        return _settings._shape_separator.join(str(value) for value in (self.height, self.width, self.channels))

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    @classmethod
    def from_text(cls, text: str) -> "TensorShape":
        """Parse ``HxWxC`` text, e.g. ``1056x640x3``

        :param text: shape text

        :returns: parsed shape

        :raises ValueError: If the text does not hold exactly three integers
        """
        parts = text.lower().split(_settings._shape_separator)
        if len(parts) != 3:
            raise ValueError(f"Expected HxWxC, got '{text}'")
        height, width, channels = (int(part) for part in parts)
        return cls(height, width, channels)

    def to_dict(self) -> typing.Dict[str, int]:
        return {"h": self.height, "w": self.width, "c": self.channels}

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, int]) -> "TensorShape":
        return cls(int(data["h"]), int(data["w"]), int(data["c"]))


@dataclasses.dataclass(frozen=True)
class LayerNode:
    """One layer of a :class:`NetworkGraph`

    :param name: unique node name. Names of the form ``row/part`` are grouped into the table row ``row``.
    :param kind: layer kind
    :param inputs: ordered names of the producing nodes
    :param kernel: ``(kh, kw)`` for spatial kinds. For ``RoiPool`` the pooled output grid.
    :param stride: spatial stride
    :param pad: symmetric padding. Padded positions are zeros for convolutions and never win a max pooling window.
    :param out_channels: output channels of ``Conv``, ``Deconv`` and ``FullyConnected``. The expected channels of an
        ``Input`` node.
    :param groups: convolution groups
    :param bias: whether ``Conv``, ``Deconv`` or ``FullyConnected`` carry a bias vector
    :param channel_range: ``[start, stop)`` channel view of a ``Slice`` node
    :param spatial_scale: image to feature map coordinate scale of a ``RoiPool`` node
    """

    name: str
    kind: LayerKind
    inputs: typing.Tuple[str, ...] = ()
    kernel: typing.Tuple[int, int] = (1, 1)
    stride: int = 1
    pad: int = 0
    out_channels: typing.Optional[int] = None
    groups: int = 1
    bias: bool = False
    channel_range: typing.Optional[typing.Tuple[int, int]] = None
    spatial_scale: typing.Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        kernel = self.kernel
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        object.__setattr__(self, "kernel", tuple(int(value) for value in kernel))
        if self.channel_range is not None:
            object.__setattr__(self, "channel_range", tuple(int(value) for value in self.channel_range))

    @property
    def row(self) -> str:
        """Structure table row the node is accounted in"""
        return self.name.split(_settings._row_separator)[0]

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        """Return the graph description file entry of the node"""
        data: typing.Dict[str, typing.Any] = {
            "name": self.name,
            "kind": self.kind.value,
            "kernel": list(self.kernel),
            "stride": self.stride,
            "pad": self.pad,
            "out_channels": self.out_channels,
            "groups": self.groups,
            "inputs": list(self.inputs),
            "bias": self.bias,
        }
        if self.channel_range is not None:
            data["channel_range"] = list(self.channel_range)
        if self.spatial_scale is not None:
            data["spatial_scale"] = self.spatial_scale
        return data

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "LayerNode":
        """Build a node from a graph description file entry

        :raises UnsupportedKindError: If the kind is not a :class:`LayerKind` value
        """
        try:
            kind = LayerKind(data["kind"])
        except ValueError:
            raise UnsupportedKindError(f"Node '{data.get('name')}' has unknown kind '{data['kind']}'")
        fields = {field.name for field in dataclasses.fields(cls)}
        kwargs = {key: value for key, value in data.items() if key in fields}
        kwargs["kind"] = kind
        return cls(**kwargs)


@dataclasses.dataclass(frozen=True)
class NetworkGraph:
    """Immutable, topologically ordered layer graph

    The graph does not validate itself on construction so that malformed descriptions can be reported by
    :meth:`validate`.

    :param name: graph name
    :param nodes: nodes in topological order
    :param input_shape: optional input shape carried by the graph description file
    """

    name: str
    nodes: typing.Tuple[LayerNode, ...]
    input_shape: typing.Optional[TensorShape] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def __iter__(self) -> typing.Iterator[LayerNode]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, name: object) -> bool:
        return any(node.name == name for node in self.nodes)

    @property
    def names(self) -> typing.List[str]:
        return [node.name for node in self.nodes]

    @property
    def input_name(self) -> str:
        """Name of the unique ``Input`` node

        :raises GraphValidationError: If the graph has no, or more than one, ``Input`` node
        """
        inputs = [node.name for node in self.nodes if node.kind is LayerKind.INPUT]
        if len(inputs) != 1:
            raise GraphValidationError(f"Graph '{self.name}' must have exactly one Input node, found {inputs}")
        return inputs[0]

    @property
    def output_name(self) -> str:
        """Name of the last node in topological order"""
        return self.nodes[-1].name

    def node(self, name: str) -> LayerNode:
        """Return the first node with ``name``

        :raises KeyError: If no node has that name
        """
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(f"Graph '{self.name}' has no node named '{name}'")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def consumers(self, name: str) -> typing.List[LayerNode]:
        """Return the nodes that read the output of node ``name``"""
        return [node for node in self.nodes if name in node.inputs]

    def rows(self) -> "collections.OrderedDict[str, typing.List[LayerNode]]":
        """Group the non-input nodes into structure table rows by name prefix, in graph order"""
        rows: "collections.OrderedDict[str, typing.List[LayerNode]]" = collections.OrderedDict()
        for node in self.nodes:
            if node.kind is LayerKind.INPUT:
                continue
            rows.setdefault(node.row, []).append(node)
        return rows

    def replace(self, **changes) -> "NetworkGraph":
        return dataclasses.replace(self, **changes)

    def to_networkx(self) -> networkx.DiGraph:
        """Return a directed graph with one edge per input reference that resolves to a node name"""
        digraph = networkx.DiGraph(name=self.name)
        for index, node in enumerate(self.nodes):
            if node.name not in digraph:
                digraph.add_node(node.name, index=index, kind=node.kind.value)
        for node in self.nodes:
            for source in node.inputs:
                if source in digraph:
                    digraph.add_edge(source, node.name)
        return digraph

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        data: typing.Dict[str, typing.Any] = {"name": self.name}
        if self.input_shape is not None:
            data["input"] = self.input_shape.to_dict()
        data["nodes"] = [node.to_dict() for node in self.nodes]
        return data

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "NetworkGraph":
        input_shape = TensorShape.from_dict(data["input"]) if data.get("input") else None
        nodes = tuple(LayerNode.from_dict(node) for node in data["nodes"])
        return cls(name=data["name"], nodes=nodes, input_shape=input_shape)


@dataclasses.dataclass(frozen=True)
class Diagnostic:
    """One structural validation finding

    :param index: index of the offending node
    :param node: name of the offending node
    :param code: finding category, e.g. ``CycleDetected`` or ``ChannelOrSpatialMismatch``
    :param message: human readable description
    """

    index: int
    node: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.index}] {self.node}: {self.code}: {self.message}"


def save_graph(graph: NetworkGraph, path: typing.Union[str, pathlib.Path]) -> None:
    """Write a graph description file"""
    path = pathlib.Path(path)
    path.write_text(json.dumps(graph.to_dict(), indent=2) + "\n")


def load_graph(path: typing.Union[str, pathlib.Path]) -> NetworkGraph:
    """Read a graph description file

    :param path: JSON graph description file

    :returns: graph

    :raises InputFileError: If the file is missing, is not JSON, or lacks required fields
    """
    path = pathlib.Path(path)
    if not path.is_file():
        raise InputFileError(f"'{path}' does not exist or is not a file")
    try:
        data = json.loads(path.read_text())
        return NetworkGraph.from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, UnsupportedKindError) as err:
        raise InputFileError(f"'{path}' is not a valid graph description file: {err}")


def _output_extent(extent: int, node: LayerNode, axis: int) -> int:
    kernel = node.kernel[axis]
    if node.kind is LayerKind.DECONV:
        return (extent - 1) * node.stride - 2 * node.pad + kernel
    return (extent + 2 * node.pad - kernel) // node.stride + 1


def infer_node_shape(node: LayerNode, in_shapes: typing.Sequence[TensorShape]) -> TensorShape:
    """Infer the output shape of one node from the shapes of its inputs

    :param node: node
    :param in_shapes: shapes of ``node.inputs`` in order

    :returns: output shape

    :raises ChannelMismatchError: on concat/add/slice/group violations
    :raises NegativeDimensionError: If a kernel is larger than its padded input
    :raises UnsupportedKindError: If the kind has no shape rule
    """
    kind = node.kind
    if kind is LayerKind.INPUT:
        return in_shapes[0]
    if kind in MULTI_INPUT_KINDS:
        if not in_shapes:
            raise ChannelMismatchError(f"'{node.name}' has no inputs")
        first = in_shapes[0]
        for shape in in_shapes[1:]:
            if (shape.height, shape.width) != (first.height, first.width):
                raise ChannelMismatchError(
                    f"'{node.name}' inputs disagree in spatial size: {', '.join(str(item) for item in in_shapes)}"
                )
            if kind is LayerKind.ELTWISE_ADD and shape.channels != first.channels:
                raise ChannelMismatchError(
                    f"'{node.name}' inputs disagree in channels: {', '.join(str(item) for item in in_shapes)}"
                )
        if kind is LayerKind.CONCAT:
            return TensorShape(first.height, first.width, sum(shape.channels for shape in in_shapes))
        return first

    if len(in_shapes) != 1:
        raise ChannelMismatchError(f"'{node.name}' of kind {kind} takes exactly one input, got {len(in_shapes)}")
    shape = in_shapes[0]
    if kind in PASS_THROUGH_KINDS - {LayerKind.SLICE}:
        return shape
    if kind is LayerKind.SLICE:
        if node.channel_range is None:
            raise ChannelMismatchError(f"'{node.name}' Slice requires a channel range")
        start, stop = node.channel_range
        if not 0 <= start < stop <= shape.channels:
            raise ChannelMismatchError(
                f"'{node.name}' channel range [{start}, {stop}) is outside {shape.channels} channels"
            )
        return TensorShape(shape.height, shape.width, stop - start)
    if kind is LayerKind.GLOBAL_AVG_POOL:
        return TensorShape(1, 1, shape.channels)
    if kind is LayerKind.FULLY_CONNECTED:
        return TensorShape(1, 1, _required_channels(node))
    if kind is LayerKind.ROI_POOL:
        return TensorShape(node.kernel[0], node.kernel[1], shape.channels)
    if kind in SPATIAL_KINDS:
        channels = shape.channels
        if kind in CHANNEL_KINDS:
            channels = _required_channels(node)
            if node.groups < 1 or shape.channels % node.groups or channels % node.groups:
                raise GroupMismatchError(
                    f"'{node.name}' groups {node.groups} must divide input channels {shape.channels} and output "
                    f"channels {channels}"
                )
        height = _output_extent(shape.height, node, 0)
        width = _output_extent(shape.width, node, 1)
        if height < 1 or width < 1:
            raise NegativeDimensionError(
                f"'{node.name}' kernel {node.kernel[0]}x{node.kernel[1]} is larger than its padded input {shape}"
            )
        return TensorShape(height, width, channels)
    raise UnsupportedKindError(f"'{node.name}' kind {kind} has no shape rule")


def _required_channels(node: LayerNode) -> int:
    if node.out_channels is None or node.out_channels < 1:
        raise ChannelMismatchError(f"'{node.name}' requires positive out_channels, got '{node.out_channels}'")
    return node.out_channels


def _check_input_channels(node: LayerNode, input_shape: TensorShape) -> None:
    if node.out_channels is not None and node.out_channels != input_shape.channels:
        raise ChannelMismatchError(
            f"Input node '{node.name}' expects {node.out_channels} channels, got input shape {input_shape}"
        )


def infer_shapes(
    graph: NetworkGraph, input_shape: typing.Optional[TensorShape] = None
) -> typing.Dict[str, TensorShape]:
    """Map every node of the graph to its output shape

    Conv and max-pool output extents are ``floor((in + 2 pad - k) / stride) + 1``, deconv output extents are
    ``(in - 1) stride - 2 pad + k``, concat sums channels and element-wise add preserves shape.

    :param graph: graph in topological order
    :param input_shape: input image shape. Defaults to ``graph.input_shape``.

    :returns: node name to output shape, in graph order

    :raises GraphValidationError: If neither ``input_shape`` nor ``graph.input_shape`` is available
    :raises ChannelMismatchError: on concat/add/group violations or an input channel mismatch
    :raises NegativeDimensionError: If a kernel is larger than its padded input
    """
    if input_shape is None:
        input_shape = graph.input_shape
    if input_shape is None:
        raise GraphValidationError(f"Graph '{graph.name}' has no input shape")
    shapes: typing.Dict[str, TensorShape] = {}
    for node in graph.nodes:
        if node.kind is LayerKind.INPUT:
            _check_input_channels(node, input_shape)
            shapes[node.name] = input_shape
            continue
        try:
            in_shapes = [shapes[source] for source in node.inputs]
        except KeyError as err:
            raise ChannelMismatchError(f"'{node.name}' reads unknown or later node {err}")
        shapes[node.name] = infer_node_shape(node, in_shapes)
    return shapes


def _expected_arity(node: LayerNode) -> typing.Tuple[int, typing.Optional[int]]:
    if node.kind is LayerKind.INPUT:
        return (0, 0)
    if node.kind in MULTI_INPUT_KINDS:
        return (1, None)
    return (1, 1)


def validate(graph: NetworkGraph) -> typing.List[Diagnostic]:
    """Report every violated structural invariant of the graph

    Structural checks cover cycles, forward and unknown references, duplicate names, input arity and the unique Input
    node. When the graph carries an input shape, shape checks report channel, spatial, group and dimension violations
    without raising. Diagnostics are ordered by node index.

    :param graph: graph to check

    :returns: diagnostics, empty for a valid graph
    """
    diagnostics: typing.List[Diagnostic] = []
    first_index: typing.Dict[str, int] = {}
    for index, node in enumerate(graph.nodes):
        if node.name in first_index:
            diagnostics.append(
                Diagnostic(
                    index,
                    node.name,
                    "DuplicateName",
                    f"name already used by node {first_index[node.name]}",
                )
            )
        else:
            first_index[node.name] = index

    cycle_members: typing.Set[str] = set()
    for cycle in networkx.simple_cycles(graph.to_networkx()):
        cycle_members.update(cycle)
        anchor = min(cycle, key=lambda name: first_index[name])
        ordered = sorted(cycle, key=lambda name: first_index[name])
        diagnostics.append(
            Diagnostic(first_index[anchor], anchor, "CycleDetected", f"cycle through {' -> '.join(ordered)}")
        )

    input_nodes = [index for index, node in enumerate(graph.nodes) if node.kind is LayerKind.INPUT]
    if not input_nodes:
        diagnostics.append(Diagnostic(0, graph.name, "MissingInput", "graph has no Input node"))
    for index in input_nodes[1:]:
        diagnostics.append(
            Diagnostic(index, graph.nodes[index].name, "MultipleInputs", "graph must have exactly one Input node")
        )

    for index, node in enumerate(graph.nodes):
        low, high = _expected_arity(node)
        count = len(node.inputs)
        if count < low or (high is not None and count > high):
            diagnostics.append(
                Diagnostic(index, node.name, "ArityMismatch", f"kind {node.kind} does not take {count} inputs")
            )
        for source in node.inputs:
            if source not in first_index:
                diagnostics.append(Diagnostic(index, node.name, "UnknownInput", f"input '{source}' does not exist"))
            elif first_index[source] >= index and node.name not in cycle_members:
                diagnostics.append(
                    Diagnostic(index, node.name, "ForwardReference", f"input '{source}' is not an earlier node")
                )

    if graph.input_shape is not None:
        diagnostics.extend(_shape_diagnostics(graph, first_index))

    return sorted(diagnostics, key=lambda diagnostic: diagnostic.index)


def _shape_diagnostics(graph: NetworkGraph, first_index: typing.Dict[str, int]) -> typing.List[Diagnostic]:
    diagnostics = []
    shapes: typing.Dict[str, TensorShape] = {}
    for index, node in enumerate(graph.nodes):
        if first_index[node.name] != index:
            continue
        if node.kind is LayerKind.INPUT:
            try:
                _check_input_channels(node, graph.input_shape)
                shapes[node.name] = graph.input_shape
            except ChannelMismatchError as err:
                diagnostics.append(Diagnostic(index, node.name, "ChannelOrSpatialMismatch", str(err)))
            continue
        if not node.inputs or any(source not in shapes for source in node.inputs):
            continue
        try:
            shapes[node.name] = infer_node_shape(node, [shapes[source] for source in node.inputs])
        except GroupMismatchError as err:
            diagnostics.append(Diagnostic(index, node.name, "GroupMismatch", str(err)))
        except ChannelMismatchError as err:
            diagnostics.append(Diagnostic(index, node.name, "ChannelOrSpatialMismatch", str(err)))
        except NegativeDimensionError as err:
            diagnostics.append(Diagnostic(index, node.name, "NegativeDimension", str(err)))
    return diagnostics


def require_valid(graph: NetworkGraph) -> None:
    """Raise when :meth:`validate` reports diagnostics

    :raises GraphValidationError: listing every diagnostic
    """
    diagnostics = validate(graph)
    if diagnostics:
        details = "\n".join(str(diagnostic) for diagnostic in diagnostics)
        raise GraphValidationError(f"Graph '{graph.name}' failed validation:\n{details}")


def merge_graphs(name: str, *graphs: NetworkGraph) -> NetworkGraph:
    """Concatenate graphs that share node names at their seams, keeping the first occurrence of each name

    Used to join the feature extractor with head fragments whose Input node carries the name of the feature node
    they read.

    :param name: name of the merged graph
    :param graphs: graphs in order. The first graph supplies the input shape.
    """
    nodes: typing.List[LayerNode] = []
    seen: typing.Set[str] = set()
    for graph in graphs:
        for node in graph.nodes:
            if node.name in seen:
                continue
            if node.kind is LayerKind.INPUT and nodes:
                raise ChannelMismatchError(f"Input node '{node.name}' of '{graph.name}' does not match any node")
            seen.add(node.name)
            nodes.append(node)
    return NetworkGraph(name=name, nodes=tuple(nodes), input_shape=graphs[0].input_shape if graphs else None)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

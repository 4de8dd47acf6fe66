"""External API module for the desk-scale CPU tensor engine

Executes :class:`pvawb.graph_ir.NetworkGraph` objects on ``(batch, channels, height, width)`` float64 arrays.
Convolutions lower to grouped matrix products over ``im2col`` windows, so the reduction order is fixed and repeated
runs are bit-identical. Reverse mode gradients cover every layer kind except ``Deconv`` and ``RoiPool``.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import json
import math
import typing
import pathlib
import warnings
import dataclasses

import numpy
from numpy.lib.stride_tricks import sliding_window_view

from pvawb import _settings
from pvawb import detection_post
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape, infer_shapes
from pvawb.exceptions import (
    ChoicesError,
    InputFileError,
    NonFiniteValueError,
    ShapeMismatchError,
    UnsupportedKindError,
)


_exclude_from_namespace = set(globals().keys())

ParameterDict = typing.Dict[str, numpy.ndarray]

#: Parameters updated by gradient descent. BatchNorm running statistics are excluded.
LEARNABLE_PARAMETERS = ("weight", "bias", "scale", "gamma", "beta")

#: Kinds without a backward implementation
FORWARD_ONLY_KINDS = frozenset({LayerKind.DECONV, LayerKind.ROI_POOL})


class WeightStore:
    """Per-node parameter arrays with a per-node meta header

    The binary format is a little-endian ``uint64`` header length, a UTF-8 JSON header
    ``{"nodes": {node: {param: {"offset": ..., "shape": [...]}}}, "meta": {node: {...}}}`` and the little-endian float64
    parameter data. Offsets count float64 elements from the start of the data block.

    :param params: ``{node: {param: array}}``
    :param meta: ``{node: {key: JSON value}}``
    """

    def __init__(
        self,
        params: typing.Optional[typing.Mapping[str, typing.Mapping[str, numpy.ndarray]]] = None,
        meta: typing.Optional[typing.Mapping[str, typing.Dict[str, typing.Any]]] = None,
    ) -> None:
        self._params: typing.Dict[str, ParameterDict] = {}
        for node, values in (params or {}).items():
            for name, value in values.items():
                self.set(node, name, value)
        self.meta: typing.Dict[str, typing.Dict[str, typing.Any]] = {
            node: dict(data) for node, data in (meta or {}).items()
        }

    def __contains__(self, node: object) -> bool:
        return node in self._params

    def __getitem__(self, node: str) -> ParameterDict:
        return self._params[node]

    def __iter__(self) -> typing.Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    @property
    def nodes(self) -> typing.List[str]:
        return list(self._params)

    def items(self) -> typing.ItemsView[str, ParameterDict]:
        return self._params.items()

    def get(self, node: str, name: str) -> numpy.ndarray:
        """Return parameter ``name`` of ``node``

        :raises ShapeMismatchError: If the node has no such parameter
        """
        try:
            return self._params[node][name]
        except KeyError:
            raise ShapeMismatchError(f"Weight store has no parameter '{name}' for node '{node}'")

    def set(self, node: str, name: str, value: numpy.ndarray) -> None:
        self._params.setdefault(node, {})[name] = numpy.array(value, dtype=numpy.float64)

    def pop(self, node: str) -> ParameterDict:
        self.meta.pop(node, None)
        return self._params.pop(node)

    def copy(self) -> "WeightStore":
        """Deep copy of the parameters and meta header"""
        return WeightStore(
            params={node: {name: value.copy() for name, value in values.items()} for node, values in self.items()},
            meta=json.loads(json.dumps(self.meta)),
        )

    def to_bytes(self) -> bytes:
        header: typing.Dict[str, typing.Any] = {"nodes": {}, "meta": self.meta}
        chunks = []
        offset = 0
        for node, values in self._params.items():
            entries = header["nodes"].setdefault(node, {})
            for name, value in values.items():
                entries[name] = {"offset": offset, "shape": list(value.shape)}
                chunks.append(value.astype(_settings._weight_store_data_dtype).reshape(-1))
                offset += value.size
        encoded = json.dumps(header).encode("utf-8")
        data = numpy.concatenate(chunks) if chunks else numpy.zeros(0, dtype=_settings._weight_store_data_dtype)
        length = numpy.array([len(encoded)], dtype=_settings._weight_store_header_dtype)
        return length.tobytes() + encoded + data.astype(_settings._weight_store_data_dtype).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "WeightStore":
        """Decode the binary format

        :raises ValueError: If the header or data block is truncated or malformed
        """
        width = numpy.dtype(_settings._weight_store_header_dtype).itemsize
        if len(raw) < width:
            raise ValueError("weight store is shorter than its header length field")
        length = int(numpy.frombuffer(raw[:width], dtype=_settings._weight_store_header_dtype)[0])
        header = json.loads(raw[width : width + length].decode("utf-8"))
        data = numpy.frombuffer(raw[width + length :], dtype=_settings._weight_store_data_dtype)
        store = cls(meta=header.get("meta", {}))
        for node, entries in header["nodes"].items():
            for name, entry in entries.items():
                size = int(numpy.prod(entry["shape"], dtype=numpy.int64))
                offset = int(entry["offset"])
                if offset + size > data.size:
                    raise ValueError(f"parameter '{name}' of node '{node}' runs past the end of the data block")
                store.set(node, name, data[offset : offset + size].reshape(entry["shape"]))
        return store

    def save(self, path: typing.Union[str, pathlib.Path]) -> None:
        pathlib.Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: typing.Union[str, pathlib.Path]) -> "WeightStore":
        """Read a weight store file

        :raises InputFileError: If the file is missing or malformed
        """
        path = pathlib.Path(path)
        if not path.is_file():
            raise InputFileError(f"'{path}' does not exist or is not a file")
        try:
            return cls.from_bytes(path.read_bytes())
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as err:
            raise InputFileError(f"'{path}' is not a valid weight store: {err}")


def _bilinear_ramp(size: int) -> numpy.ndarray:
    factor = (size + 1) // 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    return 1.0 - numpy.abs(numpy.arange(size) - center) / factor


def bilinear_kernel(rows: int, columns: typing.Optional[int] = None) -> numpy.ndarray:
    """Bilinear interpolation kernel used to initialize up-scaling deconvolutions"""
    return numpy.outer(_bilinear_ramp(rows), _bilinear_ramp(rows if columns is None else columns))


def init_weights(
    graph: NetworkGraph,
    input_shape: typing.Optional[TensorShape] = None,
    seed: int = _settings._default_seed,
) -> WeightStore:
    """Initialize the parameters of every node

    Convolutions and fully-connected layers are He-normal with zero biases, deconvolutions are bilinear up-samplers,
    ``ScaleBias`` is the identity and ``BatchNorm`` is the identity with zero mean and unit variance running
    statistics.

    :param graph: graph to initialize
    :param input_shape: input shape, defaults to the graph input shape
    :param seed: random seed

    :returns: weight store
    """
    shapes = infer_shapes(graph, input_shape)
    rng = numpy.random.default_rng(seed)
    store = WeightStore()
    for node in graph.nodes:
        if node.kind is LayerKind.INPUT:
            continue
        channels = shapes[node.inputs[0]].channels
        if node.kind is LayerKind.CONV:
            kh, kw = node.kernel
            fan_in = channels // node.groups * kh * kw
            shape = (node.out_channels, channels // node.groups, kh, kw)
            store.set(node.name, "weight", rng.standard_normal(shape) * math.sqrt(2.0 / fan_in))
        elif node.kind is LayerKind.DECONV:
            kh, kw = node.kernel
            per_group = channels // node.groups
            shape = (channels, node.out_channels // node.groups, kh, kw)
            weight = numpy.broadcast_to(bilinear_kernel(kh, kw), shape) / per_group
            store.set(node.name, "weight", weight)
        elif node.kind is LayerKind.FULLY_CONNECTED:
            fan_in = shapes[node.inputs[0]].size
            store.set(node.name, "weight", rng.standard_normal((node.out_channels, fan_in)) * math.sqrt(2.0 / fan_in))
        elif node.kind is LayerKind.SCALE_BIAS:
            store.set(node.name, "scale", numpy.ones(channels))
            store.set(node.name, "bias", numpy.zeros(channels))
        elif node.kind is LayerKind.BATCH_NORM:
            store.set(node.name, "gamma", numpy.ones(channels))
            store.set(node.name, "beta", numpy.zeros(channels))
            store.set(node.name, "running_mean", numpy.zeros(channels))
            store.set(node.name, "running_var", numpy.ones(channels))
        if node.kind in (LayerKind.CONV, LayerKind.DECONV, LayerKind.FULLY_CONNECTED) and node.bias:
            store.set(node.name, "bias", numpy.zeros(node.out_channels))
    return store


class MacCounter:
    """Accumulates the multiply-accumulate operations executed by the engine's products"""

    def __init__(self) -> None:
        self.macs = 0
        self.per_node: typing.Dict[str, int] = {}

    def add(self, node: str, count: int) -> None:
        self.macs += int(count)
        self.per_node[node] = self.per_node.get(node, 0) + int(count)


@dataclasses.dataclass
class _Context:
    weights: WeightStore
    mode: str
    dtype: typing.Any
    rois: typing.Optional[numpy.ndarray] = None
    counter: typing.Optional[MacCounter] = None
    epsilon: float = _settings._batchnorm_epsilon

    def param(self, node: LayerNode, name: str, shape: typing.Optional[typing.Tuple[int, ...]] = None) -> numpy.ndarray:
        value = self.weights.get(node.name, name)
        if shape is not None and value.shape != tuple(shape):
            raise ShapeMismatchError(
                f"Parameter '{name}' of node '{node.name}' has shape {value.shape}, expected {tuple(shape)}"
            )
        return value.astype(self.dtype, copy=False)

    def count(self, node: LayerNode, macs: int) -> None:
        if self.counter is not None:
            self.counter.add(node.name, macs)


def _windows(array: numpy.ndarray, kernel: typing.Tuple[int, int], stride: int) -> numpy.ndarray:
    """``(N, C, Ho, Wo, kh, kw)`` strided view of every kernel window of an already padded array"""
    return sliding_window_view(array, kernel, axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(
    columns: numpy.ndarray, padded_shape: typing.Tuple[int, ...], kernel: typing.Tuple[int, int], stride: int
) -> numpy.ndarray:
    """Sum ``(N, C, kh, kw, Ho, Wo)`` window contributions back onto a padded ``(N, C, Hp, Wp)`` array"""
    result = numpy.zeros(padded_shape, dtype=columns.dtype)
    rows, cols = columns.shape[4:]
    for i in range(kernel[0]):
        for j in range(kernel[1]):
            result[:, :, i : i + stride * rows : stride, j : j + stride * cols : stride] += columns[:, :, i, j]
    return result


def _pad(array: numpy.ndarray, pad: int, value: float = 0.0) -> numpy.ndarray:
    if pad == 0:
        return array
    return numpy.pad(array, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _conv_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    batch, channels, _, _ = x.shape
    groups = node.groups
    kh, kw = node.kernel
    per_group = channels // groups
    weight = ctx.param(node, "weight", (node.out_channels, per_group, kh, kw))
    padded = _pad(x, node.pad)
    windows = _windows(padded, node.kernel, node.stride)
    rows, cols = windows.shape[2:4]
    columns = windows.transpose(0, 1, 4, 5, 2, 3).reshape(batch, groups, per_group * kh * kw, rows * cols)
    matrix = weight.reshape(groups, node.out_channels // groups, per_group * kh * kw)
    out = numpy.matmul(matrix[None], columns).reshape(batch, node.out_channels, rows, cols)
    if node.bias:
        out = out + ctx.param(node, "bias", (node.out_channels,))[None, :, None, None]
    ctx.count(node, batch * node.out_channels * per_group * kh * kw * rows * cols)
    return out, {"columns": columns, "padded_shape": padded.shape, "matrix": matrix}


def _conv_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    (x,) = args
    batch, channels, height, width = x.shape
    groups = node.groups
    kh, kw = node.kernel
    per_group = channels // groups
    rows, cols = grad.shape[2:]
    grouped = grad.reshape(batch, groups, node.out_channels // groups, rows * cols)
    weight_grad = numpy.matmul(grouped, cache["columns"].transpose(0, 1, 3, 2)).sum(axis=0)
    params = {"weight": weight_grad.reshape(node.out_channels, per_group, kh, kw)}
    if node.bias:
        params["bias"] = grad.sum(axis=(0, 2, 3))
    column_grad = numpy.matmul(cache["matrix"].transpose(0, 2, 1)[None], grouped)
    column_grad = column_grad.reshape(batch, channels, kh, kw, rows, cols)
    padded = _scatter_windows(column_grad, cache["padded_shape"], node.kernel, node.stride)
    return [padded[:, :, node.pad : node.pad + height, node.pad : node.pad + width]], params


def _deconv_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    batch, channels, height, width = x.shape
    groups = node.groups
    kh, kw = node.kernel
    per_group = channels // groups
    outputs_per_group = node.out_channels // groups
    weight = ctx.param(node, "weight", (channels, outputs_per_group, kh, kw))
    matrix = weight.reshape(groups, per_group, outputs_per_group * kh * kw).transpose(0, 2, 1)
    columns = numpy.matmul(matrix[None], x.reshape(batch, groups, per_group, height * width))
    columns = columns.reshape(batch, node.out_channels, kh, kw, height, width)
    full = (batch, node.out_channels, (height - 1) * node.stride + kh, (width - 1) * node.stride + kw)
    out = _scatter_windows(columns, full, node.kernel, node.stride)
    out = out[:, :, node.pad : full[2] - node.pad, node.pad : full[3] - node.pad]
    if node.bias:
        out = out + ctx.param(node, "bias", (node.out_channels,))[None, :, None, None]
    ctx.count(node, batch * channels * outputs_per_group * kh * kw * height * width)
    return out, {}


def _max_pool_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    padded = _pad(x, node.pad, value=-numpy.inf)
    windows = _windows(padded, node.kernel, node.stride)
    flat = windows.reshape(windows.shape[:4] + (-1,))
    argmax = flat.argmax(axis=-1)
    out = numpy.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, {"argmax": argmax, "padded_shape": padded.shape}


def _max_pool_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    (x,) = args
    height, width = x.shape[2:]
    kh, kw = node.kernel
    rows, cols = grad.shape[2:]
    padded = numpy.zeros(cache["padded_shape"], dtype=grad.dtype)
    stride = node.stride
    for index in range(kh * kw):
        i, j = divmod(index, kw)
        routed = numpy.where(cache["argmax"] == index, grad, 0.0)
        padded[:, :, i : i + stride * rows : stride, j : j + stride * cols : stride] += routed
    return [padded[:, :, node.pad : node.pad + height, node.pad : node.pad + width]], {}


def _concat_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    return numpy.concatenate(args, axis=1), {}


def _concat_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    bounds = numpy.cumsum([arg.shape[1] for arg in args])[:-1]
    return numpy.split(grad, bounds, axis=1), {}


def _negate_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    return -args[0], {}


def _negate_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    return [-grad], {}


def _scale_bias_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    channels = x.shape[1]
    scale = ctx.param(node, "scale", (channels,))
    bias = ctx.param(node, "bias", (channels,))
    return x * scale[None, :, None, None] + bias[None, :, None, None], {}


def _scale_bias_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    (x,) = args
    scale = weights.get(node.name, "scale")
    params = {"scale": (grad * x).sum(axis=(0, 2, 3)), "bias": grad.sum(axis=(0, 2, 3))}
    return [grad * scale[None, :, None, None]], params


def _relu_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    return numpy.maximum(args[0], 0.0), {}


def _relu_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    return [numpy.where(args[0] > 0.0, grad, 0.0)], {}


def _batch_norm_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    channels = x.shape[1]
    gamma = ctx.param(node, "gamma", (channels,))[None, :, None, None]
    beta = ctx.param(node, "beta", (channels,))[None, :, None, None]
    if ctx.mode == "inference":
        mean = ctx.param(node, "running_mean", (channels,))
        var = ctx.param(node, "running_var", (channels,))
        scale = gamma / numpy.sqrt(var + ctx.epsilon)[None, :, None, None]
        return (x - mean[None, :, None, None]) * scale + beta, {}
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inverse_std = 1.0 / numpy.sqrt(var + ctx.epsilon)
    normalized = (x - mean) * inverse_std
    return normalized * gamma + beta, {"normalized": normalized, "inverse_std": inverse_std}


def _batch_norm_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    normalized = cache["normalized"]
    gamma = weights.get(node.name, "gamma")[None, :, None, None]
    params = {"gamma": (grad * normalized).sum(axis=(0, 2, 3)), "beta": grad.sum(axis=(0, 2, 3))}
    count = grad.shape[0] * grad.shape[2] * grad.shape[3]
    normalized_grad = grad * gamma
    x_grad = (
        cache["inverse_std"]
        / count
        * (
            count * normalized_grad
            - normalized_grad.sum(axis=(0, 2, 3), keepdims=True)
            - normalized * (normalized_grad * normalized).sum(axis=(0, 2, 3), keepdims=True)
        )
    )
    return [x_grad], params


def _fully_connected_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    (x,) = args
    flat = x.reshape(x.shape[0], -1)
    weight = ctx.param(node, "weight", (node.out_channels, flat.shape[1]))
    out = flat @ weight.T
    if node.bias:
        out = out + ctx.param(node, "bias", (node.out_channels,))
    ctx.count(node, flat.shape[0] * flat.shape[1] * node.out_channels)
    return out.reshape(x.shape[0], node.out_channels, 1, 1), {}


def _fully_connected_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    (x,) = args
    flat = x.reshape(x.shape[0], -1)
    grad = grad.reshape(grad.shape[0], -1)
    params = {"weight": grad.T @ flat}
    if node.bias:
        params["bias"] = grad.sum(axis=0)
    return [(grad @ weights.get(node.name, "weight")).reshape(x.shape)], params


def _eltwise_add_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    out = args[0]
    for arg in args[1:]:
        out = out + arg
    return out, {}


def _eltwise_add_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    return [grad for _ in args], {}


def _slice_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    start, stop = node.channel_range
    return args[0][:, start:stop], {}


def _slice_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    start, stop = node.channel_range
    x_grad = numpy.zeros_like(args[0])
    x_grad[:, start:stop] = grad
    return [x_grad], {}


def _global_avg_pool_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    return args[0].mean(axis=(2, 3), keepdims=True), {}


def _global_avg_pool_backward(node: LayerNode, grad: numpy.ndarray, args, cache, weights: WeightStore):
    (x,) = args
    return [numpy.broadcast_to(grad / (x.shape[2] * x.shape[3]), x.shape).copy()], {}


def _roi_pool_forward(node: LayerNode, args: typing.List[numpy.ndarray], ctx: _Context):
    if ctx.rois is None:
        raise ShapeMismatchError(f"RoiPool node '{node.name}' requires regions of interest")
    scale = node.spatial_scale if node.spatial_scale is not None else _settings._roi_spatial_scale
    return roi_pool(args[0], ctx.rois, output_size=node.kernel, spatial_scale=scale), {}


_FORWARD = {
    LayerKind.CONV: _conv_forward,
    LayerKind.DECONV: _deconv_forward,
    LayerKind.MAX_POOL: _max_pool_forward,
    LayerKind.CONCAT: _concat_forward,
    LayerKind.NEGATE: _negate_forward,
    LayerKind.SCALE_BIAS: _scale_bias_forward,
    LayerKind.RELU: _relu_forward,
    LayerKind.BATCH_NORM: _batch_norm_forward,
    LayerKind.FULLY_CONNECTED: _fully_connected_forward,
    LayerKind.ROI_POOL: _roi_pool_forward,
    LayerKind.ELTWISE_ADD: _eltwise_add_forward,
    LayerKind.SLICE: _slice_forward,
    LayerKind.GLOBAL_AVG_POOL: _global_avg_pool_forward,
}

_BACKWARD = {
    LayerKind.CONV: _conv_backward,
    LayerKind.MAX_POOL: _max_pool_backward,
    LayerKind.CONCAT: _concat_backward,
    LayerKind.NEGATE: _negate_backward,
    LayerKind.SCALE_BIAS: _scale_bias_backward,
    LayerKind.RELU: _relu_backward,
    LayerKind.BATCH_NORM: _batch_norm_backward,
    LayerKind.FULLY_CONNECTED: _fully_connected_backward,
    LayerKind.ELTWISE_ADD: _eltwise_add_backward,
    LayerKind.SLICE: _slice_backward,
    LayerKind.GLOBAL_AVG_POOL: _global_avg_pool_backward,
}


def _check_mode(mode: str) -> None:
    if mode not in _settings._allowable_modes:
        raise ChoicesError(f"Unknown engine mode '{mode}', choose from {_settings._allowable_modes}")


def _check_finite(name: str, array: numpy.ndarray) -> None:
    if not numpy.all(numpy.isfinite(array)):
        raise NonFiniteValueError(f"Node '{name}' produced NaN or infinite values")


def _run(
    graph: NetworkGraph,
    weights: WeightStore,
    inputs: numpy.ndarray,
    ctx: _Context,
) -> typing.Tuple[typing.Dict[str, numpy.ndarray], typing.Dict[str, typing.Dict[str, typing.Any]]]:
    inputs = numpy.asarray(inputs, dtype=ctx.dtype)
    if inputs.ndim != 4:
        raise ShapeMismatchError(f"Engine input must be (batch, channels, height, width), found shape {inputs.shape}")
    _check_finite(graph.input_name, inputs)
    activations: typing.Dict[str, numpy.ndarray] = {}
    caches: typing.Dict[str, typing.Dict[str, typing.Any]] = {}
    for node in graph.nodes:
        if node.kind is LayerKind.INPUT:
            if node.out_channels is not None and node.out_channels != inputs.shape[1]:
                raise ShapeMismatchError(
                    f"Input node '{node.name}' expects {node.out_channels} channels, found {inputs.shape[1]}"
                )
            activations[node.name] = inputs
            continue
        args = [activations[source] for source in node.inputs]
        try:
            out, cache = _FORWARD[node.kind](node, args, ctx)
        except ValueError as err:
            raise ShapeMismatchError(f"Node '{node.name}' cannot consume inputs {[arg.shape for arg in args]}: {err}")
        _check_finite(node.name, out)
        activations[node.name] = out
        caches[node.name] = cache
    return activations, caches


def forward(
    graph: NetworkGraph,
    weights: WeightStore,
    inputs: numpy.ndarray,
    mode: str = "inference",
    rois: typing.Optional[typing.Union[typing.Sequence["detection_post.BoxLike"], numpy.ndarray]] = None,
    counter: typing.Optional[MacCounter] = None,
    dtype: typing.Any = numpy.float64,
) -> typing.Dict[str, numpy.ndarray]:
    """Run a graph forward

    :param graph: graph in topological order
    :param weights: parameters of every weighted node
    :param inputs: ``(batch, channels, height, width)`` input
    :param mode: ``train`` uses mini-batch BatchNorm statistics, ``inference`` the running statistics
    :param rois: image-coordinate regions of interest for ``RoiPool`` nodes, pooled from batch item 0
    :param counter: optional multiply-accumulate counter
    :param dtype: ``numpy.float64`` or ``numpy.float32``

    :returns: ``{node name: activation}`` for every node, the input included

    :raises ChoicesError: If the mode is unknown
    :raises ShapeMismatchError: If an input or parameter shape does not match its node
    :raises NonFiniteValueError: If any activation is NaN or infinite
    """
    _check_mode(mode)
    roi_array = None if rois is None else detection_post.boxes_to_array(rois)
    ctx = _Context(weights=weights, mode=mode, dtype=dtype, rois=roi_array, counter=counter)
    activations, _ = _run(graph, weights, inputs, ctx)
    return activations


@dataclasses.dataclass
class Gradients:
    """Result of :meth:`backward`

    :param weights: ``{node: {param: gradient}}`` for every learnable parameter
    :param input: gradient with respect to the graph input
    :param activations: train mode activations of the forward pass
    """

    weights: typing.Dict[str, ParameterDict]
    input: numpy.ndarray
    activations: typing.Dict[str, numpy.ndarray]


def backward(
    graph: NetworkGraph,
    weights: WeightStore,
    inputs: numpy.ndarray,
    loss_grad: typing.Union[numpy.ndarray, typing.Mapping[str, numpy.ndarray]],
) -> Gradients:
    """Reverse mode gradients of a train mode forward pass

    :param graph: graph without ``Deconv`` or ``RoiPool`` nodes
    :param weights: parameters
    :param inputs: ``(batch, channels, height, width)`` input
    :param loss_grad: gradient of the loss with respect to the graph output, or ``{node: gradient}`` for several
        nodes

    :returns: gradients

    :raises UnsupportedKindError: If the graph holds a forward-only node
    :raises ShapeMismatchError: If a loss gradient does not match its activation
    """
    for node in graph.nodes:
        if node.kind in FORWARD_ONLY_KINDS:
            raise UnsupportedKindError(f"Node '{node.name}' of kind {node.kind} has no backward implementation")
    ctx = _Context(weights=weights, mode="train", dtype=numpy.float64)
    activations, caches = _run(graph, weights, inputs, ctx)
    if isinstance(loss_grad, numpy.ndarray):
        loss_grad = {graph.output_name: loss_grad}
    grads: typing.Dict[str, numpy.ndarray] = {}
    for name, grad in loss_grad.items():
        grad = numpy.asarray(grad, dtype=numpy.float64)
        if grad.shape != activations[name].shape:
            raise ShapeMismatchError(
                f"Loss gradient for '{name}' has shape {grad.shape}, expected {activations[name].shape}"
            )
        grads[name] = grad.copy()
    parameter_grads: typing.Dict[str, ParameterDict] = {}
    input_grad = numpy.zeros_like(activations[graph.input_name])
    for node in reversed(graph.nodes):
        grad = grads.pop(node.name, None)
        if grad is None:
            continue
        if node.kind is LayerKind.INPUT:
            input_grad = grad
            continue
        args = [activations[source] for source in node.inputs]
        input_grads, params = _BACKWARD[node.kind](node, grad, args, caches[node.name], weights)
        for source, source_grad in zip(node.inputs, input_grads):
            grads[source] = grads[source] + source_grad if source in grads else numpy.array(source_grad)
        if params:
            parameter_grads[node.name] = params
    for node in graph.nodes:
        if node.name not in weights:
            continue
        learnable = {name: value for name, value in weights[node.name].items() if name in LEARNABLE_PARAMETERS}
        node_grads = parameter_grads.setdefault(node.name, {})
        for name, value in learnable.items():
            node_grads.setdefault(name, numpy.zeros_like(value))
    return Gradients(weights=parameter_grads, input=input_grad, activations=activations)


def softmax(logits: numpy.ndarray) -> numpy.ndarray:
    """Row-wise softmax of ``N x K`` logits"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exponentials = numpy.exp(shifted)
    return exponentials / exponentials.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: numpy.ndarray, labels: numpy.ndarray) -> typing.Tuple[float, numpy.ndarray]:
    """Mean softmax cross-entropy loss and its gradient

    :param logits: ``N x K`` or ``(N, K, 1, 1)`` class scores
    :param labels: ``N`` integer labels

    :returns: ``(loss, gradient with the shape of logits)``

    :raises ShapeMismatchError: If the labels do not match the batch or a label is out of range
    """
    logits = numpy.asarray(logits, dtype=numpy.float64)
    flat = logits.reshape(logits.shape[0], -1)
    labels = numpy.asarray(labels).reshape(-1).astype(int)
    if labels.shape[0] != flat.shape[0] or numpy.any(labels < 0) or numpy.any(labels >= flat.shape[1]):
        raise ShapeMismatchError(
            f"Labels {labels.tolist()} do not index {flat.shape[1]} classes of {flat.shape[0]} rows"
        )
    probabilities = softmax(flat)
    rows = numpy.arange(flat.shape[0])
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_probabilities = shifted - numpy.log(numpy.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probabilities[rows, labels].mean())
    grad = probabilities.copy()
    grad[rows, labels] -= 1.0
    grad /= flat.shape[0]
    return loss, grad.reshape(logits.shape)


def update_running_statistics(
    graph: NetworkGraph,
    weights: WeightStore,
    activations: typing.Mapping[str, numpy.ndarray],
    momentum: float = _settings._batchnorm_momentum,
) -> None:
    """Update BatchNorm running statistics in place with an exponential moving average of mini-batch statistics

    :param graph: graph
    :param weights: weight store to update
    :param activations: train mode activations
    :param momentum: weight of the previous running value
    """
    for node in graph.nodes:
        if node.kind is not LayerKind.BATCH_NORM:
            continue
        x = activations[node.inputs[0]]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean = weights.get(node.name, "running_mean")
        running_var = weights.get(node.name, "running_var")
        weights.set(node.name, "running_mean", momentum * running_mean + (1.0 - momentum) * mean)
        weights.set(node.name, "running_var", momentum * running_var + (1.0 - momentum) * var)


def fold_batchnorm(
    graph: NetworkGraph, weights: WeightStore, epsilon: float = _settings._batchnorm_epsilon
) -> typing.Tuple[NetworkGraph, WeightStore]:
    """Rewrite inference mode BatchNorm nodes as fixed affine transforms

    A BatchNorm whose input is a convolution with no other consumer is folded into that convolution, which takes
    over the BatchNorm's name. Every other BatchNorm becomes a ``ScaleBias`` node.

    :param graph: graph
    :param weights: parameters with running statistics

    :returns: ``(rewritten graph, rewritten weights)`` computing the same inference mode outputs
    """
    store = weights.copy()
    nodes: typing.List[LayerNode] = []
    for node in graph.nodes:
        if node.kind is not LayerKind.BATCH_NORM:
            nodes.append(node)
            continue
        gamma = weights.get(node.name, "gamma")
        scale = gamma / numpy.sqrt(weights.get(node.name, "running_var") + epsilon)
        shift = weights.get(node.name, "beta") - weights.get(node.name, "running_mean") * scale
        store.pop(node.name)
        source = graph.node(node.inputs[0])
        if source.kind is LayerKind.CONV and len(graph.consumers(source.name)) == 1 and nodes[-1].name == source.name:
            bias = weights.get(source.name, "bias") if source.bias else numpy.zeros(source.out_channels)
            store.pop(source.name)
            store.set(node.name, "weight", weights.get(source.name, "weight") * scale[:, None, None, None])
            store.set(node.name, "bias", bias * scale + shift)
            nodes[-1] = dataclasses.replace(source, name=node.name, bias=True)
        else:
            store.set(node.name, "scale", scale)
            store.set(node.name, "bias", shift)
            nodes.append(LayerNode(node.name, LayerKind.SCALE_BIAS, node.inputs))
    return graph.replace(nodes=tuple(nodes)), store


def roi_pool(
    features: numpy.ndarray,
    rois: typing.Union[typing.Sequence["detection_post.BoxLike"], numpy.ndarray],
    output_size: typing.Tuple[int, int] = (_settings._roi_pool_size, _settings._roi_pool_size),
    spatial_scale: float = _settings._roi_spatial_scale,
) -> numpy.ndarray:
    """Max-pool every region of interest onto a fixed grid

    ROI corners are mapped to feature map cells by rounding ``coordinate * spatial_scale`` half up. The quantized ROI
    is split into ``output_size`` bins with floor starts and ceiling ends. A bin that is empty after clipping to the
    feature map pools the single nearest cell and issues a warning.

    :param features: ``(C, H, W)`` or ``(N, C, H, W)`` feature map. Batch item 0 is pooled.
    :param rois: image-coordinate boxes
    :param output_size: ``(rows, columns)`` of the pooled grid
    :param spatial_scale: image to feature map scale

    :returns: ``(R, C, rows, columns)`` pooled features
    """
    features = numpy.asarray(features)
    if features.ndim == 4:
        features = features[0]
    if features.ndim != 3:
        raise ShapeMismatchError(f"ROI pooling requires a (C, H, W) feature map, found shape {features.shape}")
    channels, height, width = features.shape
    boxes = detection_post.boxes_to_array(rois)
    pooled_rows, pooled_cols = output_size
    out = numpy.empty((boxes.shape[0], channels, pooled_rows, pooled_cols), dtype=features.dtype)
    degenerate = False

    def _bin(start: int, extent: float, index: int, limit: int) -> typing.Tuple[int, int]:
        nonlocal degenerate
        low = min(max(int(math.floor(index * extent)) + start, 0), limit)
        high = min(max(int(math.ceil((index + 1) * extent)) + start, 0), limit)
        if high <= low:
            degenerate = True
            low = min(low, limit - 1)
            high = low + 1
        return low, high

    for index, (x1, y1, x2, y2) in enumerate(boxes):
        start_x = math.floor(x1 * spatial_scale + 0.5)
        start_y = math.floor(y1 * spatial_scale + 0.5)
        end_x = math.floor(x2 * spatial_scale + 0.5)
        end_y = math.floor(y2 * spatial_scale + 0.5)
        bin_height = max(end_y - start_y + 1, 1) / pooled_rows
        bin_width = max(end_x - start_x + 1, 1) / pooled_cols
        for i in range(pooled_rows):
            top, bottom = _bin(start_y, bin_height, i, height)
            for j in range(pooled_cols):
                left, right = _bin(start_x, bin_width, j, width)
                out[index, :, i, j] = features[:, top:bottom, left:right].max(axis=(1, 2))
    if degenerate:
        warnings.warn("ROI pooling clamped an empty bin to a single feature map cell")
    return out


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

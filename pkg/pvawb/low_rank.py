"""External API module for truncated singular value decomposition compression of fully-connected layers

A dense ``m x n`` layer is replaced by a rank ``k`` pair: a bias-free ``k x n`` projection followed by an ``m x k``
layer that carries the singular values and the original bias. Fully-connected inputs are flattened row-major over
``channels x height x width``, the same layout the tensor engine uses.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import warnings
import dataclasses

import numpy
import scipy.linalg

from pvawb import _settings
from pvawb import tensor_engine
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, infer_shapes
from pvawb.exceptions import ConvergenceFailureError, InvalidSpecError, MissingHeadError, NonFiniteValueError


_exclude_from_namespace = set(globals().keys())


def svd(matrix: numpy.ndarray) -> typing.Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    """Thin singular value decomposition ``W = U diag(S) V^T``

    The divide and conquer LAPACK driver is tried first. The slower QR driver is the fallback when it does not
    converge.

    :param matrix: ``m x n`` matrix

    :returns: ``(U, S, V)`` with ``U`` of shape ``m x r``, ``S`` descending of length ``r`` and ``V`` of shape
        ``n x r`` where ``r = min(m, n)``

    :raises NonFiniteValueError: If the matrix holds NaN or infinite values
    :raises ConvergenceFailureError: If every driver fails to converge
    """
    matrix = numpy.asarray(matrix, dtype=numpy.float64)
    if matrix.ndim != 2:
        raise InvalidSpecError(f"svd requires a matrix, found an array of shape {matrix.shape}")
    if not numpy.all(numpy.isfinite(matrix)):
        raise NonFiniteValueError("svd requires a finite matrix")
    for driver in ("gesdd", "gesvd"):
        try:
            left, singular, right_transposed = scipy.linalg.svd(
                matrix, full_matrices=False, lapack_driver=driver, check_finite=False
            )
        except numpy.linalg.LinAlgError:
            continue
        return left, singular, right_transposed.T
    raise ConvergenceFailureError(f"Singular value decomposition of a {matrix.shape} matrix did not converge")


@dataclasses.dataclass(frozen=True)
class FactorizedFc:
    """Rank ``k`` factorization of a fully-connected layer

    :param first: ``k x n`` bias-free projection, the leading right singular vectors
    :param second: ``m x k`` layer, the leading left singular vectors scaled by the singular values
    :param bias: original ``m`` bias vector
    :param tail: Frobenius norm of the discarded singular values
    """

    first: numpy.ndarray
    second: numpy.ndarray
    bias: numpy.ndarray
    tail: float = 0.0

    def __post_init__(self) -> None:
        if self.first.shape[0] != self.second.shape[1]:
            raise InvalidSpecError(
                f"Factor shapes {self.second.shape} and {self.first.shape} do not chain into a dense matrix"
            )
        if self.bias.shape != (self.second.shape[0],):
            raise InvalidSpecError(f"Bias of shape {self.bias.shape} does not match {self.second.shape[0]} outputs")

    @property
    def rank(self) -> int:
        return self.first.shape[0]

    @property
    def original_shape(self) -> typing.Tuple[int, int]:
        return self.second.shape[0], self.first.shape[1]

    def dense(self) -> numpy.ndarray:
        """Return the rank ``k`` reconstruction of the dense weight matrix"""
        return self.second @ self.first

    def forward(self, inputs: numpy.ndarray) -> numpy.ndarray:
        """Apply the factorized layer to ``N x n`` inputs"""
        inputs = numpy.asarray(inputs, dtype=numpy.float64)
        return (inputs @ self.first.T) @ self.second.T + self.bias

    def reconstruction_error(self, matrix: numpy.ndarray) -> float:
        """Frobenius norm of ``matrix`` minus the reconstruction"""
        return float(numpy.linalg.norm(numpy.asarray(matrix, dtype=numpy.float64) - self.dense()))


def compress_fc(weight: numpy.ndarray, bias: typing.Optional[numpy.ndarray], rank: int) -> FactorizedFc:
    """Factorize an ``m x n`` fully-connected weight matrix by truncated SVD

    :param weight: ``m x n`` weight matrix
    :param bias: ``m`` bias vector. ``None`` is a zero bias.
    :param rank: retained rank ``k``

    :returns: factorized layer

    :raises InvalidSpecError: If ``rank`` is outside ``[1, min(m, n)]``
    """
    weight = numpy.asarray(weight, dtype=numpy.float64)
    rows, columns = weight.shape
    if not 1 <= rank <= min(rows, columns):
        raise InvalidSpecError(f"Rank {rank} is outside [1, {min(rows, columns)}] for a {rows}x{columns} matrix")
    bias = numpy.zeros(rows) if bias is None else numpy.asarray(bias, dtype=numpy.float64).reshape(rows)
    left, singular, right = svd(weight)
    tail = float(numpy.sqrt(numpy.sum(singular[rank:] ** 2)))
    return FactorizedFc(
        first=right[:, :rank].T.copy(),
        second=left[:, :rank] * singular[:rank],
        bias=bias.copy(),
        tail=tail,
    )


def _target_nodes(graph: NetworkGraph, layers: typing.Sequence[str]) -> typing.List[LayerNode]:
    nodes = []
    for name in layers:
        if name not in graph:
            raise MissingHeadError(f"Graph '{graph.name}' has no '{name}' layer to compress")
        node = graph.node(name)
        if node.kind is not LayerKind.FULLY_CONNECTED:
            raise MissingHeadError(f"Layer '{name}' of graph '{graph.name}' is a {node.kind}, not a FullyConnected")
        nodes.append(node)
    return nodes


def rewrite_classifier(
    graph: NetworkGraph,
    rank: int = _settings._default_rank,
    layers: typing.Sequence[str] = _settings._compressed_layers,
) -> NetworkGraph:
    """Replace fully-connected layers with rank ``rank`` factorized pairs

    Layer ``fcX`` becomes ``fcX_L`` (``rank`` outputs, no bias) followed by ``fcX`` (original outputs and bias), so
    consumers of ``fcX`` are untouched. A warning is issued when a pair costs more multiplications than the dense layer.

    :param graph: classifier head with an input shape
    :param rank: retained rank
    :param layers: names of the layers to factorize

    :returns: rewritten graph

    :raises MissingHeadError: If a layer is absent or not fully-connected
    :raises InvalidSpecError: If ``rank`` exceeds a layer's smaller dimension
    """
    targets = {node.name: node for node in _target_nodes(graph, layers)}
    shapes = infer_shapes(graph)
    nodes: typing.List[LayerNode] = []
    for node in graph.nodes:
        if node.name not in targets:
            nodes.append(node)
            continue
        inputs = shapes[node.inputs[0]].size
        outputs = node.out_channels
        if not 1 <= rank <= min(inputs, outputs):
            raise InvalidSpecError(f"Rank {rank} is outside [1, {min(inputs, outputs)}] for layer '{node.name}'")
        if rank * (inputs + outputs) > inputs * outputs:
            warnings.warn(
                f"Rank {rank} factorization of '{node.name}' ({outputs}x{inputs}) costs more multiplications than "
                "the dense layer"
            )
        first = f"{node.name}{_settings._low_rank_suffix}"
        nodes.append(LayerNode(first, LayerKind.FULLY_CONNECTED, node.inputs, out_channels=rank, bias=False))
        nodes.append(dataclasses.replace(node, inputs=(first,)))
    return graph.replace(nodes=tuple(nodes))


def compress_weights(
    graph: NetworkGraph,
    weights: "tensor_engine.WeightStore",
    rank: int = _settings._default_rank,
    layers: typing.Sequence[str] = _settings._compressed_layers,
) -> typing.Tuple[NetworkGraph, "tensor_engine.WeightStore"]:
    """Rewrite a graph and factorize its trained fully-connected weights

    The factorized layer records ``{"rank", "original_shape", "tail"}`` in the weight store meta header.

    :param graph: graph holding the dense layers
    :param weights: parameters of ``graph``
    :param rank: retained rank
    :param layers: names of the layers to factorize

    :returns: ``(rewritten graph, rewritten weights)``
    """
    rewritten = rewrite_classifier(graph, rank=rank, layers=layers)
    store = weights.copy()
    for name in layers:
        params = weights[name]
        factorized = compress_fc(params["weight"], params.get("bias"), rank)
        store.pop(name)
        store.set(f"{name}{_settings._low_rank_suffix}", "weight", factorized.first)
        store.set(name, "weight", factorized.second)
        if "bias" in params:
            store.set(name, "bias", factorized.bias)
        store.meta[name] = {
            "rank": factorized.rank,
            "original_shape": list(factorized.original_shape),
            "tail": factorized.tail,
        }
    return rewritten, store


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

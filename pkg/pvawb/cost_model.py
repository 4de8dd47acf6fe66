"""External API module computing parameter and multiply-accumulate counts

Per-node and per-graph parameter and MAC (multiply-accumulate) counts, the structure table rendering and rounding
convention, and the detection GMAC breakdown.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import dataclasses

import pandas

from pvawb import _settings
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape, infer_shapes
from pvawb.exceptions import ChoicesError, InvalidSpecError, UnsupportedKindError


_exclude_from_namespace = set(globals().keys())

_ZERO_COST_KINDS = frozenset(
    {
        LayerKind.INPUT,
        LayerKind.MAX_POOL,
        LayerKind.CONCAT,
        LayerKind.NEGATE,
        LayerKind.RELU,
        LayerKind.ELTWISE_ADD,
        LayerKind.SLICE,
        LayerKind.GLOBAL_AVG_POOL,
        LayerKind.ROI_POOL,
    }
)
_AFFINE_KINDS = frozenset({LayerKind.SCALE_BIAS, LayerKind.BATCH_NORM})


@dataclasses.dataclass(frozen=True)
class LayerCost:
    """Cost of one node or a sum of nodes

    :param params: weight count, biases and affine terms excluded
    :param macs: multiply-accumulate count
    :param biases: bias vector and per-channel affine term count
    """

    params: int = 0
    macs: int = 0
    biases: int = 0

    def __add__(self, other: "LayerCost") -> "LayerCost":
        return LayerCost(self.params + other.params, self.macs + other.macs, self.biases + other.biases)

    def to_dict(self) -> typing.Dict[str, int]:
        return dataclasses.asdict(self)


def layer_cost(
    node: LayerNode,
    in_shapes: typing.Union[TensorShape, typing.Sequence[TensorShape]],
    out_shape: TensorShape,
) -> LayerCost:
    """Count the parameters and MACs of one node

    Conv and deconv parameters are ``kh kw (c_in / groups) c_out`` and cost ``params out_h out_w`` MACs, deconv
    counted at its output size. Fully-connected parameters are ``in_dim out_dim`` and cost ``params`` MACs, per ROI
    for classifier layers. Pooling, activation, concat, negation, slice, add and affine layers cost nothing. Bias
    vectors and affine terms are reported separately in ``biases``.

    :param node: node
    :param in_shapes: input shape, or shapes in ``node.inputs`` order
    :param out_shape: output shape

    :returns: cost

    :raises UnsupportedKindError: If the kind has no cost rule
    """
    if isinstance(in_shapes, TensorShape):
        in_shapes = [in_shapes]
    kind = node.kind
    if kind in _ZERO_COST_KINDS:
        return LayerCost()
    if kind in _AFFINE_KINDS:
        return LayerCost(biases=2 * out_shape.channels)
    biases = out_shape.channels if node.bias else 0
    if kind in (LayerKind.CONV, LayerKind.DECONV):
        kh, kw = node.kernel
        params = kh * kw * (in_shapes[0].channels // node.groups) * out_shape.channels
        return LayerCost(params=params, macs=params * out_shape.height * out_shape.width, biases=biases)
    if kind is LayerKind.FULLY_CONNECTED:
        params = in_shapes[0].size * out_shape.channels
        return LayerCost(params=params, macs=params, biases=biases)
    raise UnsupportedKindError(f"'{node.name}' kind {kind} has no cost rule")


def format_params(count: int) -> str:
    """Render a parameter count the way the structure table prints it

    Blank for zero, rounded up to 0.1K below 10K, rounded half up to 1K otherwise, e.g. ``2352 -> 2.4K``,
    ``6144 -> 6.2K``, ``11072 -> 11K``.
    """
    return _format_hundreds(_params_hundreds(count))


def _params_hundreds(count: int) -> int:
    """Table-rounded parameter count in units of 100"""
    if count == 0:
        return 0
    if count < 10_000:
        return -(-count // 100)
    return (count + 500) // 1000 * 10


def _format_hundreds(hundreds: int) -> str:
    if hundreds == 0:
        return ""
    if hundreds < 100:
        return f"{hundreds // 10}.{hundreds % 10}K"
    return f"{(hundreds + 5) // 10}K"


def format_macs(count: int) -> str:
    """Render a MAC count to the nearest 1M, blank for zero, e.g. ``397393920 -> 397M``"""
    return f"{_macs_millions(count)}M" if count else ""


def _macs_millions(count: int) -> int:
    return (count + 500_000) // 1_000_000


def _check_rounding(rounding: str) -> None:
    if rounding not in _settings._allowable_rounding:
        raise ChoicesError(f"Unknown rounding '{rounding}', choose from {_settings._allowable_rounding}")


@dataclasses.dataclass(frozen=True)
class CostRow:
    """One structure table row: the nodes sharing a name prefix"""

    name: str
    output_size: TensorShape
    cost: LayerCost

    @property
    def params_text(self) -> str:
        return format_params(self.cost.params)

    @property
    def mac_text(self) -> str:
        return format_macs(self.cost.macs)


@dataclasses.dataclass(frozen=True)
class CostReport:
    """Per-node and total parameter and MAC counts of a graph at one input shape

    :param graph_name: name of the costed graph
    :param input_shape: input shape
    :param per_node: node name to cost, in graph order
    :param shapes: node name to output shape
    :param row_names: node name to structure table row
    :param rounding: ``table`` or ``exact`` rendering of the text outputs
    """

    graph_name: str
    input_shape: TensorShape
    per_node: typing.Dict[str, LayerCost]
    shapes: typing.Dict[str, TensorShape]
    row_names: typing.Dict[str, typing.Optional[str]]
    rounding: str = _settings._default_rounding

    @property
    def totals(self) -> LayerCost:
        total = LayerCost()
        for cost in self.per_node.values():
            total = total + cost
        return total

    @property
    def output_shape(self) -> TensorShape:
        return self.shapes[list(self.shapes)[-1]]

    def rows(self) -> typing.List[CostRow]:
        """Aggregate the nodes into structure table rows. A row's output size is that of the node named like the row,
        or its last node."""
        costs: typing.Dict[str, LayerCost] = {}
        last: typing.Dict[str, str] = {}
        for name, cost in self.per_node.items():
            row = self.row_names[name]
            if row is None:
                continue
            costs[row] = costs.get(row, LayerCost()) + cost
            last[row] = name
        return [
            CostRow(row, self.shapes[row] if row in self.shapes else self.shapes[last[row]], cost)
            for row, cost in costs.items()
        ]

    def total_texts(self) -> typing.Tuple[str, str]:
        """Return the ``(params, MAC)`` Total cells: sums of the table-rounded row values"""
        rows = self.rows()
        hundreds = sum(_params_hundreds(row.cost.params) for row in rows)
        millions = sum(_macs_millions(row.cost.macs) for row in rows)
        return _format_hundreds(hundreds), f"{millions}M" if millions else ""

    def to_dataframe(self, rounding: typing.Optional[str] = None) -> pandas.DataFrame:
        """Return the structure table with a Total row

        :param rounding: ``table`` prints the rounded cells, ``exact`` adds the raw integers alongside them
        """
        rounding = self.rounding if rounding is None else rounding
        _check_rounding(rounding)
        records = []
        for row in self.rows():
            record = {
                "name": row.name,
                "output_size": str(row.output_size),
                "params": row.params_text,
                "MAC": row.mac_text,
            }
            if rounding == "exact":
                record.update({"params_exact": row.cost.params, "MAC_exact": row.cost.macs})
            records.append(record)
        params_text, mac_text = self.total_texts()
        total = {"name": "Total", "output_size": "", "params": params_text, "MAC": mac_text}
        if rounding == "exact":
            total.update({"params_exact": self.totals.params, "MAC_exact": self.totals.macs})
        records.append(total)
        return pandas.DataFrame.from_records(records).set_index("name")

    def to_text(self, rounding: typing.Optional[str] = None) -> str:
        return self.to_dataframe(rounding).to_string()

    def to_dict(self, rounding: typing.Optional[str] = None) -> typing.Dict[str, typing.Any]:
        """Return a JSON serializable report with per-node counts, table rows and totals"""
        rounding = self.rounding if rounding is None else rounding
        _check_rounding(rounding)
        params_text, mac_text = self.total_texts()
        return {
            "graph": self.graph_name,
            "input": str(self.input_shape),
            "rounding": rounding,
            "per_node": {name: cost.to_dict() for name, cost in self.per_node.items()},
            "rows": [
                {
                    "name": row.name,
                    "output_size": str(row.output_size),
                    "params": row.cost.params,
                    "macs": row.cost.macs,
                    "params_text": row.params_text,
                    "mac_text": row.mac_text,
                }
                for row in self.rows()
            ],
            "totals": {**self.totals.to_dict(), "params_text": params_text, "mac_text": mac_text},
        }


def graph_cost(
    graph: NetworkGraph,
    input_shape: typing.Optional[TensorShape] = None,
    rounding: str = _settings._default_rounding,
) -> CostReport:
    """Cost every node of a shape-inferred graph

    :param graph: graph
    :param input_shape: input shape. Defaults to ``graph.input_shape``.
    :param rounding: ``table`` or ``exact`` rendering of the text outputs. Counts are always exact integers.

    :returns: cost report

    :raises ChoicesError: If the rounding is unknown
    :raises ChannelMismatchError: propagated from shape inference
    :raises NegativeDimensionError: propagated from shape inference
    """
    _check_rounding(rounding)
    shapes = infer_shapes(graph, input_shape)
    per_node: typing.Dict[str, LayerCost] = {}
    row_names: typing.Dict[str, typing.Optional[str]] = {}
    for node in graph.nodes:
        in_shapes = [shapes[source] for source in node.inputs] or [shapes[node.name]]
        per_node[node.name] = layer_cost(node, in_shapes, shapes[node.name])
        row_names[node.name] = None if node.kind is LayerKind.INPUT else node.row
    return CostReport(
        graph_name=graph.name,
        input_shape=input_shape if input_shape is not None else graph.input_shape,
        per_node=per_node,
        shapes=shapes,
        row_names=row_names,
        rounding=rounding,
    )


def _gmac_tenths(macs: int) -> int:
    return (macs + 50_000_000) // 100_000_000


@dataclasses.dataclass(frozen=True)
class DetectionCost:
    """Detection pipeline MAC breakdown

    :param shared_cnn: feature extractor MACs
    :param rpn: region proposal head MACs
    :param classifier_per_roi: classifier head MACs for one ROI
    :param n_proposals: number of ROIs fed to the classifier
    """

    shared_cnn: int
    rpn: int
    classifier_per_roi: int
    n_proposals: int

    @property
    def classifier(self) -> int:
        return self.classifier_per_roi * self.n_proposals

    @property
    def total(self) -> int:
        return self.shared_cnn + self.rpn + self.classifier

    def gmac(self, rounding: str = _settings._default_rounding) -> typing.Dict[str, float]:
        """Return ``{shared_cnn, rpn, classifier, total}`` in GMAC

        ``table`` rounds each component to 0.1 GMAC and reports the total as the sum of the rounded components.
        ``exact`` reports unrounded values.
        """
        _check_rounding(rounding)
        components = {"shared_cnn": self.shared_cnn, "rpn": self.rpn, "classifier": self.classifier}
        if rounding == "exact":
            breakdown = {key: value / 1e9 for key, value in components.items()}
            breakdown["total"] = self.total / 1e9
            return breakdown
        tenths = {key: _gmac_tenths(value) for key, value in components.items()}
        tenths["total"] = sum(tenths.values())
        return {key: value / 10 for key, value in tenths.items()}


def detection_cost(
    feature_cost: CostReport,
    rpn: NetworkGraph,
    classifier: NetworkGraph,
    n_proposals: int = _settings._default_proposals,
) -> DetectionCost:
    """Combine the feature extractor cost with the head costs

    The heads are costed at their own input shape, or at the feature extractor output shape when they carry none.
    The classifier cost scales linearly with the number of proposals.

    :param feature_cost: feature extractor cost report
    :param rpn: region proposal head graph
    :param classifier: per-ROI classifier head graph
    :param n_proposals: number of ROIs

    :returns: breakdown

    :raises InvalidSpecError: If ``n_proposals`` is negative
    """
    if n_proposals < 0:
        raise InvalidSpecError(f"n_proposals must be non-negative, got '{n_proposals}'")
    rpn_cost = graph_cost(rpn, rpn.input_shape or feature_cost.output_shape)
    classifier_cost = graph_cost(classifier, classifier.input_shape or feature_cost.output_shape)
    return DetectionCost(
        shared_cnn=feature_cost.totals.macs,
        rpn=rpn_cost.totals.macs,
        classifier_per_roi=classifier_cost.totals.macs,
        n_proposals=n_proposals,
    )


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""External API module constructing the PVANet building blocks and graphs

Builds mCReLU and Inception blocks with pre-activation residual wiring, the full PVANet feature extractor with its
hyper-feature concatenation, the RPN and classifier heads, the ALL-CNN-C cost variants, and small networks used by the
receptive-field and training utilities.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import dataclasses

from pvawb import _settings
from pvawb import low_rank
from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape
from pvawb.exceptions import ChoicesError, InvalidSpecError


_exclude_from_namespace = set(globals().keys())


@dataclasses.dataclass(frozen=True)
class McReluSpec:
    """``1x1 - KxK - 1x1`` block where the KxK convolution is followed by the modified C.ReLU

    :param c_in: block input channels
    :param c_reduce: channels of the leading 1x1 convolution, ``None`` without it
    :param c_mid: channels of the KxK convolution before negation doubling
    :param c_out: channels of the trailing 1x1 convolution, ``None`` without it
    :param k: KxK kernel size
    :param stride: block stride, carried by the first convolution of the block
    :param residual: join block input and output with an element-wise add
    :param has_leading_1x1: must agree with ``c_reduce``
    :param preact: BatchNorm and ReLU before each convolution
    :param scale_bias: per-channel scale and separate bias after the negation concat. ``False`` builds the shared-bias
        C.ReLU.
    """

    c_in: int
    c_reduce: typing.Optional[int]
    c_mid: int
    c_out: typing.Optional[int]
    k: int = 3
    stride: int = 1
    residual: bool = True
    has_leading_1x1: bool = True
    preact: bool = True
    scale_bias: bool = True

    @property
    def out_channels(self) -> int:
        return self.c_out if self.c_out is not None else 2 * self.c_mid

    @property
    def needs_projection(self) -> bool:
        return self.residual and (self.stride != 1 or self.c_in != self.out_channels)

    def validate(self) -> None:
        """Check the channel arithmetic

        :raises InvalidSpecError: If a channel count, kernel or stride is not positive, or ``has_leading_1x1`` does
            not agree with ``c_reduce``
        """
        counts = {"c_in": self.c_in, "c_mid": self.c_mid, "k": self.k, "stride": self.stride}
        if self.c_reduce is not None:
            counts["c_reduce"] = self.c_reduce
        if self.c_out is not None:
            counts["c_out"] = self.c_out
        for key, value in counts.items():
            if not isinstance(value, int) or value < 1:
                raise InvalidSpecError(f"McReluSpec {key} must be a positive integer, got '{value}'")
        if self.has_leading_1x1 != (self.c_reduce is not None):
            raise InvalidSpecError(
                f"McReluSpec has_leading_1x1={self.has_leading_1x1} does not agree with c_reduce={self.c_reduce}"
            )


@dataclasses.dataclass(frozen=True)
class InceptionSpec:
    """Four path Inception block: 1x1, 1x1-3x3, 1x1-3x3-3x3 and an optional 3x3 max-pool-1x1 path

    :param c_in: block input channels
    :param b1: 1x1 path channels
    :param b3: ``(reduce, out)`` channels of the 3x3 path
    :param b5: ``(reduce, mid, out)`` channels of the factorized 5x5 path
    :param pool_proj: channels of the pooling path 1x1, present iff ``stride == 2``
    :param c_out: channels of the final 1x1 convolution
    :param stride: block stride, carried by the first op of every path
    :param residual: join block input and output with an element-wise add
    :param preact: BatchNorm and ReLU before each convolution
    """

    c_in: int
    b1: int
    b3: typing.Tuple[int, int]
    b5: typing.Tuple[int, int, int]
    pool_proj: typing.Optional[int]
    c_out: int
    stride: int = 1
    residual: bool = True
    preact: bool = True

    @property
    def concat_channels(self) -> int:
        return self.b1 + self.b3[1] + self.b5[2] + (self.pool_proj or 0)

    @property
    def needs_projection(self) -> bool:
        return self.residual and (self.stride != 1 or self.c_in != self.c_out)

    def validate(self) -> None:
        """Check the channel arithmetic

        :raises InvalidSpecError: If a channel count or stride is not positive, a path has the wrong length, or the
            pooling path does not agree with the stride
        """
        if len(self.b3) != 2 or len(self.b5) != 3:
            raise InvalidSpecError("InceptionSpec paths must be (reduce, out) and (reduce, mid, out)")
        counts = [self.c_in, self.b1, *self.b3, *self.b5, self.c_out, self.stride]
        if self.pool_proj is not None:
            counts.append(self.pool_proj)
        if any(not isinstance(value, int) or value < 1 for value in counts):
            raise InvalidSpecError(f"InceptionSpec channel counts and stride must be positive integers: {self}")
        if (self.pool_proj is not None) != (self.stride == 2):
            raise InvalidSpecError(
                f"InceptionSpec pooling path must be present iff stride is 2, got stride {self.stride} and "
                f"pool_proj {self.pool_proj}"
            )


class _Fragment:
    """Accumulates the nodes of one named block"""

    def __init__(self, name: str, source: str) -> None:
        self.name = name
        self.current = source
        self.nodes: typing.List[LayerNode] = []

    def add(self, suffix: str, kind: LayerKind, inputs: typing.Optional[typing.Sequence[str]] = None, **kwargs) -> str:
        name = f"{self.name}{_settings._row_separator}{suffix}" if suffix else self.name
        inputs = [self.current] if inputs is None else list(inputs)
        self.nodes.append(LayerNode(name=name, kind=kind, inputs=tuple(inputs), **kwargs))
        self.current = name
        return name

    def conv(
        self,
        suffix: str,
        channels: int,
        kernel: int,
        stride: int = 1,
        source: typing.Optional[str] = None,
        pad: typing.Optional[int] = None,
    ) -> str:
        return self.add(
            suffix,
            LayerKind.CONV,
            inputs=None if source is None else [source],
            kernel=(kernel, kernel),
            stride=stride,
            pad=kernel // 2 if pad is None else pad,
            out_channels=channels,
            bias=True,
        )

    def preact(self, prefix: str, enabled: bool) -> str:
        if enabled:
            self.add(f"{prefix}bn", LayerKind.BATCH_NORM)
            self.add(f"{prefix}relu", LayerKind.RELU)
        return self.current

    def finish(self) -> typing.List[LayerNode]:
        """Rename the last node to the block name so the block output carries the row name"""
        last = self.nodes[-1]
        if last.name != self.name:
            self.nodes[-1] = dataclasses.replace(last, name=self.name)
        return self.nodes


def _crelu(fragment: _Fragment, prefix: str, scale_bias: bool) -> None:
    conv = fragment.current
    negated = fragment.add(f"{prefix}neg", LayerKind.NEGATE)
    fragment.add(f"{prefix}concat", LayerKind.CONCAT, inputs=[conv, negated])
    if scale_bias:
        fragment.add(f"{prefix}scale", LayerKind.SCALE_BIAS)
    fragment.add(f"{prefix}crelu", LayerKind.RELU)


def mcrelu_nodes(spec: McReluSpec, name: str, source: str) -> typing.List[LayerNode]:
    """Return the nodes of an mCReLU block reading node ``source``. The block output node is named ``name``."""
    spec.validate()
    fragment = _Fragment(name, source)
    kxk_stride = spec.stride
    if spec.has_leading_1x1:
        fragment.preact("1/", spec.preact)
        fragment.conv("1/conv", spec.c_reduce, 1, stride=spec.stride)
        kxk_stride = 1
    fragment.preact("2/", spec.preact)
    fragment.conv("2/conv", spec.c_mid, spec.k, stride=kxk_stride)
    _crelu(fragment, "2/", spec.scale_bias)
    if spec.c_out is not None:
        fragment.conv("3/conv", spec.c_out, 1)
    if spec.residual:
        _residual(fragment, source, spec.needs_projection, spec.out_channels, spec.stride)
    return fragment.finish()


def inception_nodes(spec: InceptionSpec, name: str, source: str) -> typing.List[LayerNode]:
    """Return the nodes of an Inception block reading node ``source``. The block output node is named ``name``."""
    spec.validate()
    fragment = _Fragment(name, source)
    activated = fragment.preact("", spec.preact)
    outputs = [fragment.conv("b1/conv", spec.b1, 1, stride=spec.stride, source=activated)]

    fragment.conv("b3/reduce", spec.b3[0], 1, stride=spec.stride, source=activated)
    fragment.preact("b3/", spec.preact)
    outputs.append(fragment.conv("b3/conv", spec.b3[1], 3))

    fragment.conv("b5/reduce", spec.b5[0], 1, stride=spec.stride, source=activated)
    fragment.preact("b5/", spec.preact)
    fragment.conv("b5/conv1", spec.b5[1], 3)
    fragment.preact("b5/mid_", spec.preact)
    outputs.append(fragment.conv("b5/conv2", spec.b5[2], 3))

    if spec.pool_proj is not None:
        fragment.add(
            "pool/pool", LayerKind.MAX_POOL, inputs=[activated], kernel=(3, 3), stride=spec.stride, pad=1
        )
        outputs.append(fragment.conv("pool/conv", spec.pool_proj, 1))

    fragment.add("concat", LayerKind.CONCAT, inputs=outputs)
    fragment.preact("out/", spec.preact)
    fragment.conv("out/conv", spec.c_out, 1)
    if spec.residual:
        _residual(fragment, source, spec.needs_projection, spec.c_out, spec.stride)
    return fragment.finish()


def _residual(fragment: _Fragment, source: str, projection: bool, channels: int, stride: int) -> None:
    body = fragment.current
    shortcut = source
    if projection:
        shortcut = fragment.conv("proj", channels, 1, stride=stride, source=source)
    fragment.add("", LayerKind.ELTWISE_ADD, inputs=[body, shortcut])


def _input_node(channels: int, name: str = _settings._input_node_name) -> LayerNode:
    return LayerNode(name=name, kind=LayerKind.INPUT, out_channels=channels)


def build_mcrelu_block(
    spec: McReluSpec, name: str = "block", input_shape: typing.Optional[TensorShape] = None
) -> NetworkGraph:
    """Build a stand-alone mCReLU block graph

    The fragment is ``[1x1 conv] -> KxK conv -> Negate+Concat -> ScaleBias -> ReLU -> [1x1 conv]`` with BatchNorm and
    ReLU pre-activation before each convolution and a residual add, through a 1x1 projection when the block changes
    shape.

    :param spec: block specification
    :param name: block name, also the name of the block output node
    :param input_shape: optional input shape stored on the graph

    :returns: graph with an ``input`` node followed by the block

    :raises InvalidSpecError: If the channel arithmetic fails
    """
    nodes = [_input_node(spec.c_in)] + mcrelu_nodes(spec, name, _settings._input_node_name)
    return NetworkGraph(name=name, nodes=tuple(nodes), input_shape=input_shape)


def build_inception_block(
    spec: InceptionSpec, name: str = "block", input_shape: typing.Optional[TensorShape] = None
) -> NetworkGraph:
    """Build a stand-alone Inception block graph

    :param spec: block specification
    :param name: block name, also the name of the block output node
    :param input_shape: optional input shape stored on the graph

    :returns: graph with an ``input`` node followed by the block

    :raises InvalidSpecError: If the channel arithmetic fails
    """
    nodes = [_input_node(spec.c_in)] + inception_nodes(spec, name, _settings._input_node_name)
    return NetworkGraph(name=name, nodes=tuple(nodes), input_shape=input_shape)


#: Feature extractor blocks in table order
PVANET_BLOCKS: typing.Tuple[typing.Tuple[str, typing.Union[McReluSpec, InceptionSpec]], ...] = (
    ("conv2_1", McReluSpec(32, 24, 24, 64)),
    ("conv2_2", McReluSpec(64, 24, 24, 64)),
    ("conv2_3", McReluSpec(64, 24, 24, 64)),
    ("conv3_1", McReluSpec(64, 48, 48, 128, stride=2)),
    ("conv3_2", McReluSpec(128, 48, 48, 128)),
    ("conv3_3", McReluSpec(128, 48, 48, 128)),
    ("conv3_4", McReluSpec(128, 48, 48, 128)),
    ("conv4_1", InceptionSpec(128, 64, (48, 128), (24, 48, 48), 128, 256, stride=2)),
    ("conv4_2", InceptionSpec(256, 64, (64, 128), (24, 48, 48), None, 256)),
    ("conv4_3", InceptionSpec(256, 64, (64, 128), (24, 48, 48), None, 256)),
    ("conv4_4", InceptionSpec(256, 64, (64, 128), (24, 48, 48), None, 256)),
    ("conv5_1", InceptionSpec(256, 64, (96, 192), (32, 64, 64), 128, 384, stride=2)),
    ("conv5_2", InceptionSpec(384, 64, (96, 192), (32, 64, 64), None, 384)),
    ("conv5_3", InceptionSpec(384, 64, (96, 192), (32, 64, 64), None, 384)),
    ("conv5_4", InceptionSpec(384, 64, (96, 192), (32, 64, 64), None, 384)),
)

#: First block of the network. Raw input, no 1x1 convolutions, no residual.
PVANET_CONV1 = McReluSpec(3, None, 16, None, k=7, stride=2, residual=False, has_leading_1x1=False, preact=False)


def _block_nodes(spec: typing.Union[McReluSpec, InceptionSpec], name: str, source: str) -> typing.List[LayerNode]:
    if isinstance(spec, McReluSpec):
        return mcrelu_nodes(spec, name, source)
    return inception_nodes(spec, name, source)


def build_pvanet_feature_extractor() -> NetworkGraph:
    """Build the PVANet feature extraction network

    ``conv1_1`` through ``conv5_4`` and ``pool1_1``, followed by the hyper-feature nodes: ``downscale`` (3x3 max-pool,
    stride 2, on ``conv3_4``), ``upscale`` (4x4 stride 2 deconvolution on ``conv5_4`` with one group per channel),
    ``concat`` and the 1x1 ``convf`` convolution to 512 channels. The graph carries the 1056x640x3 table input.

    :returns: feature extractor graph
    """
    nodes = [_input_node(_settings._default_table_input[2])]
    nodes += mcrelu_nodes(PVANET_CONV1, "conv1_1", _settings._input_node_name)
    nodes.append(LayerNode("pool1_1", LayerKind.MAX_POOL, ("conv1_1",), kernel=(3, 3), stride=2, pad=1))
    source = "pool1_1"
    for name, spec in PVANET_BLOCKS:
        nodes += _block_nodes(spec, name, source)
        source = name

    last_channels = PVANET_BLOCKS[-1][1].c_out
    tail = _Fragment("conv5_4", source)
    tail.preact("last_", True)
    nodes += tail.nodes
    nodes.append(LayerNode("downscale", LayerKind.MAX_POOL, ("conv3_4",), kernel=(3, 3), stride=2, pad=1))
    nodes.append(
        LayerNode(
            "upscale",
            LayerKind.DECONV,
            (tail.current,),
            kernel=(4, 4),
            stride=2,
            pad=_settings._deconv_pad,
            out_channels=last_channels,
            groups=last_channels,
        )
    )
    nodes.append(LayerNode("concat", LayerKind.CONCAT, ("downscale", "conv4_4", "upscale")))
    convf = _Fragment("convf", "concat")
    convf.conv("conv", 512, 1)
    convf.add("", LayerKind.RELU)
    nodes += convf.nodes
    return NetworkGraph(
        name="pvanet", nodes=tuple(nodes), input_shape=TensorShape(*_settings._default_table_input)
    )


def build_rpn_head(input_shape: TensorShape = TensorShape(*_settings._default_heads_input)) -> NetworkGraph:
    """Build the region proposal head reading the first 128 ``convf`` channels

    :param input_shape: ``convf`` shape

    :returns: graph ``convf -> convf_rpn (slice) -> rpn_conv1 (3x3x384) -> rpn_cls_score, rpn_bbox_pred``
    """
    anchors = len(_settings._anchor_scales) * len(_settings._anchor_ratios)
    nodes = [
        _input_node(input_shape.channels, name="convf"),
        LayerNode("convf_rpn", LayerKind.SLICE, ("convf",), channel_range=(0, _settings._rpn_feed_channels)),
        LayerNode(
            "rpn_conv1",
            LayerKind.CONV,
            ("convf_rpn",),
            kernel=(3, 3),
            pad=1,
            out_channels=_settings._rpn_hidden_channels,
            bias=True,
        ),
        LayerNode("rpn_relu1", LayerKind.RELU, ("rpn_conv1",)),
        LayerNode("rpn_cls_score", LayerKind.CONV, ("rpn_relu1",), out_channels=2 * anchors, bias=True),
        LayerNode("rpn_bbox_pred", LayerKind.CONV, ("rpn_relu1",), out_channels=4 * anchors, bias=True),
    ]
    return NetworkGraph(name="rpn", nodes=tuple(nodes), input_shape=input_shape)


def build_classifier_head(input_shape: TensorShape = TensorShape(*_settings._default_heads_input)) -> NetworkGraph:
    """Build the per-ROI classifier head ``RoiPool 6x6 -> fc6 4096 -> fc7 4096 -> (cls_score 21, bbox_pred 84)``

    :param input_shape: ``convf`` shape

    :returns: classifier graph. Costs are per ROI.
    """
    classes = _settings._number_of_classes
    hidden = _settings._classifier_hidden
    nodes = [
        _input_node(input_shape.channels, name="convf"),
        LayerNode(
            "roi_pool",
            LayerKind.ROI_POOL,
            ("convf",),
            kernel=(_settings._roi_pool_size, _settings._roi_pool_size),
            spatial_scale=_settings._roi_spatial_scale,
        ),
        LayerNode("fc6", LayerKind.FULLY_CONNECTED, ("roi_pool",), out_channels=hidden, bias=True),
        LayerNode("relu6", LayerKind.RELU, ("fc6",)),
        LayerNode("fc7", LayerKind.FULLY_CONNECTED, ("relu6",), out_channels=hidden, bias=True),
        LayerNode("relu7", LayerKind.RELU, ("fc7",)),
        LayerNode("cls_score", LayerKind.FULLY_CONNECTED, ("relu7",), out_channels=classes, bias=True),
        LayerNode("bbox_pred", LayerKind.FULLY_CONNECTED, ("relu7",), out_channels=4 * classes, bias=True),
    ]
    return NetworkGraph(name="classifier", nodes=tuple(nodes), input_shape=input_shape)


def build_detection_heads(
    compressed: bool = False,
    rank: int = _settings._default_rank,
    input_shape: TensorShape = TensorShape(*_settings._default_heads_input),
) -> typing.Tuple[NetworkGraph, NetworkGraph]:
    """Build the RPN and classifier heads

    :param compressed: replace ``fc6`` and ``fc7`` with rank ``rank`` factorized pairs
    :param rank: factorization rank when compressed
    :param input_shape: ``convf`` shape

    :returns: ``(rpn, classifier)``
    """
    classifier = build_classifier_head(input_shape)
    if compressed:
        classifier = low_rank.rewrite_classifier(classifier, rank=rank)
    return build_rpn_head(input_shape), classifier


_ALLCNN_LAYERS = (
    # (channels, kernel, stride, pad, halved)
    (96, 3, 1, 1, True),
    (96, 3, 1, 1, True),
    (96, 3, 2, 1, True),
    (192, 3, 1, 1, True),
    (192, 3, 1, 1, True),
    (192, 3, 2, 1, True),
    (192, 3, 1, 0, False),
    (192, 1, 1, 0, False),
    (10, 1, 1, 0, False),
)


def build_allcnn_variant(variant: str = "original") -> NetworkGraph:
    """Build an ALL-CNN-C network for the 32x32x3 cost comparison

    ``half`` halves the output channels of the first six convolutions. ``half_crelu`` re-doubles them with a shared
    bias C.ReLU and ``half_mcrelu`` with the separate scale and bias of the modified C.ReLU. The seventh convolution
    uses valid padding.

    :param variant: one of ``original``, ``half``, ``half_crelu``, ``half_mcrelu``

    :returns: graph

    :raises ChoicesError: If the variant is unknown
    """
    if variant not in _settings._allowable_allcnn_variants:
        raise ChoicesError(f"Unknown ALL-CNN-C variant '{variant}', choose from {_settings._allowable_allcnn_variants}")
    crelu = variant in ("half_crelu", "half_mcrelu")
    channels_in = _settings._allcnn_input[2]
    nodes = [_input_node(channels_in)]
    source = _settings._input_node_name
    for index, (channels, kernel, stride, pad, halved) in enumerate(_ALLCNN_LAYERS, start=1):
        name = f"conv{index}"
        if halved and variant != "original":
            channels //= 2
        fragment = _Fragment(name, source)
        fragment.conv("conv", channels, kernel, stride=stride, pad=pad)
        if halved and crelu:
            _crelu(fragment, "", scale_bias=variant == "half_mcrelu")
        else:
            fragment.add("relu", LayerKind.RELU)
        nodes += fragment.finish()
        source = name
    nodes.append(LayerNode("gap", LayerKind.GLOBAL_AVG_POOL, (source,)))
    return NetworkGraph(
        name=f"allcnn_{variant}", nodes=tuple(nodes), input_shape=TensorShape(*_settings._allcnn_input)
    )


def build_inception_chain(
    depth: int = _settings._inception_chain_depth, channels: int = 8, size: int = 32
) -> NetworkGraph:
    """Build a chain of non-residual, stride 1 Inception blocks with paths ``1x1``, ``1x1-3x3`` and ``1x1-3x3-3x3``

    :param depth: number of blocks
    :param channels: channels of every path and block output
    :param size: input height and width

    :returns: graph with blocks ``inception1`` ... ``inception{depth}``
    """
    if depth < 1:
        raise InvalidSpecError(f"Inception chain depth must be positive, got '{depth}'")
    spec = InceptionSpec(
        channels, channels, (channels, channels), (channels, channels, channels), None, channels, residual=False
    )
    nodes = [_input_node(channels)]
    source = _settings._input_node_name
    for index in range(1, depth + 1):
        name = f"inception{index}"
        nodes += inception_nodes(spec, name, source)
        source = name
    return NetworkGraph(name="inception_chain", nodes=tuple(nodes), input_shape=TensorShape(size, size, channels))


def build_toy_crelu_net(
    variant: str = "crelu",
    size: int = _settings._toy_image_size,
    channels: int = _settings._toy_channels,
    classes: int = 2,
) -> NetworkGraph:
    """Build the toy classifier ``3x3 conv -> C.ReLU -> 2x2 max-pool -> fully-connected``

    The ``crelu`` and ``mcrelu`` variants share every node name except the ``ScaleBias`` of the modified C.ReLU.

    :param variant: ``crelu`` or ``mcrelu``
    :param size: single channel input height and width, must be even
    :param channels: KxK convolution channels before doubling
    :param classes: output classes

    :returns: graph whose last node ``fc`` produces the class logits

    :raises ChoicesError: If the variant is unknown
    """
    if variant not in _settings._allowable_toy_variants:
        raise ChoicesError(f"Unknown toy variant '{variant}', choose from {_settings._allowable_toy_variants}")
    spec = McReluSpec(
        1,
        None,
        channels,
        None,
        k=3,
        residual=False,
        has_leading_1x1=False,
        preact=False,
        scale_bias=variant == "mcrelu",
    )
    nodes = [_input_node(1)] + mcrelu_nodes(spec, "crelu1", _settings._input_node_name)
    nodes.append(LayerNode("pool1", LayerKind.MAX_POOL, ("crelu1",), kernel=(2, 2), stride=2))
    nodes.append(LayerNode("fc", LayerKind.FULLY_CONNECTED, ("pool1",), out_channels=classes, bias=True))
    return NetworkGraph(name=f"toy_{variant}", nodes=tuple(nodes), input_shape=TensorShape(size, size, 1))


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

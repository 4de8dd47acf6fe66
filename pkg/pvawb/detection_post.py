"""External API module for anchor generation, proposal decoding, non-maximum suppression and bounding box voting

Boxes use continuous pixel corners ``(x1, y1, x2, y2)`` with exclusive areas ``(x2 - x1) * (y2 - y1)``. Anchors are
laid out cell by cell, row-major over the feature map, and within a cell scale-major over ``scales x ratios``. The RPN
score and delta maps use the same anchor index ``a`` in their channel dimension.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import json
import math
import typing
import dataclasses

import numpy

from pvawb import _settings
from pvawb.exceptions import (
    InvalidBoxError,
    InvalidSpecError,
    NonFiniteValueError,
    OverflowGuardError,
    ShapeMismatchError,
)


_exclude_from_namespace = set(globals().keys())


@dataclasses.dataclass(frozen=True)
class Box:
    """Axis aligned box in pixel coordinates

    :raises InvalidBoxError: If a coordinate is not finite or a corner is inverted
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coordinates = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(value) for value in coordinates):
            raise InvalidBoxError(f"Box {coordinates} has a non-finite coordinate")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InvalidBoxError(f"Box {coordinates} has inverted corners")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> typing.Tuple[float, float]:
        """``(x, y)`` center"""
        return self.x1 + 0.5 * self.width, self.y1 + 0.5 * self.height

    def to_list(self) -> typing.List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_sequence(cls, values: typing.Sequence[float]) -> "Box":
        x1, y1, x2, y2 = (float(value) for value in values)
        return cls(x1, y1, x2, y2)


@dataclasses.dataclass(frozen=True)
class Anchor:
    """Reference box of one scale and aspect ratio at one feature map cell

    :param box: anchor box
    :param scale_index: index into the scale list
    :param ratio_index: index into the ratio list
    :param cell: ``(row, column)`` feature map cell
    """

    box: Box
    scale_index: int
    ratio_index: int
    cell: typing.Tuple[int, int] = (0, 0)


@dataclasses.dataclass(frozen=True)
class Detection:
    """Scored, classified box

    :raises InvalidBoxError: If the score is not finite or outside ``[0, 1]``
    """

    box: Box
    score: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise InvalidBoxError(f"Detection score {self.score} is outside [0, 1]")

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "class_id": self.class_id,
            "score": self.score,
            "x1": self.box.x1,
            "y1": self.box.y1,
            "x2": self.box.x2,
            "y2": self.box.y2,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "Detection":
        box = Box(float(data["x1"]), float(data["y1"]), float(data["x2"]), float(data["y2"]))
        return cls(box=box, score=float(data["score"]), class_id=int(data["class_id"]))


BoxLike = typing.Union[Box, Anchor, Detection, typing.Sequence[float]]


def boxes_to_array(boxes: typing.Union[typing.Sequence[BoxLike], numpy.ndarray]) -> numpy.ndarray:
    """Return an ``N x 4`` float array of box corners

    Accepts boxes, anchors, detections, coordinate sequences or an existing array.
    """
    if isinstance(boxes, numpy.ndarray):
        array = boxes.astype(numpy.float64).reshape(-1, 4)
        return array
    rows = []
    for item in boxes:
        if isinstance(item, (Anchor, Detection)):
            item = item.box
        if isinstance(item, Box):
            rows.append(item.to_list())
        else:
            rows.append([float(value) for value in item])
    return numpy.asarray(rows, dtype=numpy.float64).reshape(-1, 4)


def iou_matrix(boxes: numpy.ndarray, others: numpy.ndarray) -> numpy.ndarray:
    """Pairwise intersection over union of ``N x 4`` and ``M x 4`` box arrays

    Pairs with a zero union have an IoU of zero.
    """
    boxes = numpy.asarray(boxes, dtype=numpy.float64).reshape(-1, 4)
    others = numpy.asarray(others, dtype=numpy.float64).reshape(-1, 4)
    width = numpy.minimum(boxes[:, None, 2], others[None, :, 2]) - numpy.maximum(boxes[:, None, 0], others[None, :, 0])
    height = numpy.minimum(boxes[:, None, 3], others[None, :, 3]) - numpy.maximum(boxes[:, None, 1], others[None, :, 1])
    intersection = numpy.clip(width, 0.0, None) * numpy.clip(height, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    other_areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = areas[:, None] + other_areas[None, :] - intersection
    return numpy.divide(intersection, union, out=numpy.zeros_like(intersection), where=union > 0.0)


def iou(first: Box, second: Box) -> float:
    """Intersection over union of two boxes"""
    return float(iou_matrix(boxes_to_array([first]), boxes_to_array([second]))[0, 0])


def anchor_grid(
    scales: typing.Sequence[float] = _settings._anchor_scales,
    ratios: typing.Sequence[float] = _settings._anchor_ratios,
    feat_stride: int = _settings._feat_stride,
    feat_size: typing.Tuple[int, int] = (1, 1),
) -> numpy.ndarray:
    """Array form of :meth:`gen_anchors`

    :returns: ``(h * w * len(scales) * len(ratios)) x 4`` anchor corners
    """
    if len(scales) == 0 or len(ratios) == 0:
        raise InvalidSpecError("Anchor scales and ratios must not be empty")
    scales = numpy.asarray(scales, dtype=numpy.float64)
    ratios = numpy.asarray(ratios, dtype=numpy.float64)
    widths = (scales[:, None] * numpy.sqrt(ratios)[None, :]).reshape(-1)
    heights = (scales[:, None] / numpy.sqrt(ratios)[None, :]).reshape(-1)
    rows, columns = feat_size
    centers_y, centers_x = numpy.meshgrid(
        (numpy.arange(rows) + 0.5) * feat_stride, (numpy.arange(columns) + 0.5) * feat_stride, indexing="ij"
    )
    centers_x = centers_x.reshape(-1, 1)
    centers_y = centers_y.reshape(-1, 1)
    corners = numpy.stack(
        [
            centers_x - 0.5 * widths,
            centers_y - 0.5 * heights,
            centers_x + 0.5 * widths,
            centers_y + 0.5 * heights,
        ],
        axis=-1,
    )
    return corners.reshape(-1, 4)


def gen_anchors(
    scales: typing.Sequence[float] = _settings._anchor_scales,
    ratios: typing.Sequence[float] = _settings._anchor_ratios,
    feat_stride: int = _settings._feat_stride,
    feat_size: typing.Tuple[int, int] = (1, 1),
) -> typing.List[Anchor]:
    """Tile ``len(scales) * len(ratios)`` anchors over every feature map cell

    Anchors are centered on the cell center ``((x + 0.5) * stride, (y + 0.5) * stride)`` with width
    ``scale * sqrt(ratio)`` and height ``scale / sqrt(ratio)``.

    :param scales: anchor side lengths at unit ratio
    :param ratios: width over height aspect ratios
    :param feat_stride: image pixels per feature map cell
    :param feat_size: ``(rows, columns)`` of the feature map

    :returns: anchors, ordered by cell row, cell column, scale and ratio

    :raises InvalidSpecError: If scales or ratios are empty
    """
    corners = anchor_grid(scales, ratios, feat_stride, feat_size)
    per_cell = len(scales) * len(ratios)
    columns = feat_size[1]
    anchors = []
    for index, row in enumerate(corners):
        cell, offset = divmod(index, per_cell)
        scale_index, ratio_index = divmod(offset, len(ratios))
        anchors.append(Anchor(Box.from_sequence(row), scale_index, ratio_index, divmod(cell, columns)))
    return anchors


def _centers(boxes: numpy.ndarray) -> typing.Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * widths, boxes[:, 1] + 0.5 * heights, widths, heights


def clip_boxes(boxes: numpy.ndarray, image: typing.Tuple[int, int]) -> numpy.ndarray:
    """Clip ``N x 4`` box corners to an ``(height, width)`` image"""
    height, width = image
    clipped = numpy.array(boxes, dtype=numpy.float64).reshape(-1, 4)
    clipped[:, 0::2] = numpy.clip(clipped[:, 0::2], 0.0, width)
    clipped[:, 1::2] = numpy.clip(clipped[:, 1::2], 0.0, height)
    return clipped


def decode_array(
    anchors: numpy.ndarray,
    deltas: numpy.ndarray,
    image: typing.Optional[typing.Tuple[int, int]] = None,
    exp_guard: float = _settings._exp_guard,
) -> numpy.ndarray:
    """Array form of :meth:`decode_boxes`. ``image=None`` skips clipping."""
    anchors = numpy.asarray(anchors, dtype=numpy.float64).reshape(-1, 4)
    deltas = numpy.asarray(deltas, dtype=numpy.float64).reshape(-1, 4)
    if anchors.shape != deltas.shape:
        raise ShapeMismatchError(f"{anchors.shape[0]} anchors do not match {deltas.shape[0]} deltas")
    if not numpy.all(numpy.isfinite(deltas)):
        raise NonFiniteValueError("Box regression deltas must be finite")
    if deltas.size and numpy.max(deltas[:, 2:]) > exp_guard:
        raise OverflowGuardError(f"Box regression exponent {numpy.max(deltas[:, 2:])} exceeds the guard {exp_guard}")
    center_x, center_y, widths, heights = _centers(anchors)
    center_x = center_x + deltas[:, 0] * widths
    center_y = center_y + deltas[:, 1] * heights
    widths = widths * numpy.exp(deltas[:, 2])
    heights = heights * numpy.exp(deltas[:, 3])
    boxes = numpy.stack(
        [center_x - 0.5 * widths, center_y - 0.5 * heights, center_x + 0.5 * widths, center_y + 0.5 * heights], axis=1
    )
    if image is not None:
        boxes = clip_boxes(boxes, image)
    return boxes


def decode_boxes(
    anchors: typing.Sequence[BoxLike],
    deltas: numpy.ndarray,
    image: typing.Tuple[int, int],
    exp_guard: float = _settings._exp_guard,
) -> typing.List[Box]:
    """Apply center-size box regression deltas to anchors

    ``cx' = cx + tx * w``, ``cy' = cy + ty * h``, ``w' = w * exp(tw)``, ``h' = h * exp(th)``, then clip to the image.

    :param anchors: reference boxes
    :param deltas: ``N x 4`` ``(tx, ty, tw, th)``
    :param image: ``(height, width)``
    :param exp_guard: largest accepted ``tw`` or ``th``

    :returns: decoded boxes

    :raises OverflowGuardError: If ``tw`` or ``th`` exceeds ``exp_guard``
    :raises NonFiniteValueError: If a delta is not finite
    """
    decoded = decode_array(boxes_to_array(anchors), deltas, image, exp_guard=exp_guard)
    return [Box.from_sequence(row) for row in decoded]


def encode_boxes(anchors: typing.Sequence[BoxLike], boxes: typing.Sequence[BoxLike]) -> numpy.ndarray:
    """Inverse of :meth:`decode_boxes` without clipping

    :returns: ``N x 4`` deltas mapping each anchor onto its target box

    :raises InvalidBoxError: If an anchor or target has zero width or height
    """
    anchors = boxes_to_array(anchors)
    boxes = boxes_to_array(boxes)
    if anchors.shape != boxes.shape:
        raise ShapeMismatchError(f"{anchors.shape[0]} anchors do not match {boxes.shape[0]} target boxes")
    anchor_x, anchor_y, anchor_w, anchor_h = _centers(anchors)
    target_x, target_y, target_w, target_h = _centers(boxes)
    if numpy.any(anchor_w <= 0.0) or numpy.any(anchor_h <= 0.0) or numpy.any(target_w <= 0.0) or numpy.any(
        target_h <= 0.0
    ):
        raise InvalidBoxError("Box encoding requires boxes with positive width and height")
    return numpy.stack(
        [
            (target_x - anchor_x) / anchor_w,
            (target_y - anchor_y) / anchor_h,
            numpy.log(target_w / anchor_w),
            numpy.log(target_h / anchor_h),
        ],
        axis=1,
    )


def _check_threshold(iou_threshold: float) -> None:
    if not 0.0 < iou_threshold < 1.0:
        raise InvalidSpecError(f"IoU threshold {iou_threshold} is outside (0, 1)")


def nms_indices(
    boxes: numpy.ndarray,
    scores: numpy.ndarray,
    iou_threshold: float = _settings._nms_threshold,
    pre_top_k: typing.Optional[int] = None,
    post_top_k: typing.Optional[int] = None,
) -> typing.List[int]:
    """Array form of :meth:`nms` returning the surviving indices in descending score order"""
    _check_threshold(iou_threshold)
    boxes = numpy.asarray(boxes, dtype=numpy.float64).reshape(-1, 4)
    scores = numpy.asarray(scores, dtype=numpy.float64).reshape(-1)
    order = numpy.argsort(-scores, kind="stable")
    if pre_top_k is not None:
        order = order[:pre_top_k]
    suppressed = numpy.zeros(order.size, dtype=bool)
    keep: typing.List[int] = []
    for position, index in enumerate(order):
        if suppressed[position]:
            continue
        keep.append(int(index))
        if post_top_k is not None and len(keep) >= post_top_k:
            break
        rest = order[position + 1 :]
        if rest.size:
            suppressed[position + 1 :] |= iou_matrix(boxes[index], boxes[rest])[0] > iou_threshold
    return keep


def nms(
    dets: typing.Sequence[Detection],
    iou_threshold: float = _settings._nms_threshold,
    pre_top_k: typing.Optional[int] = _settings._pre_nms_top_n,
    post_top_k: typing.Optional[int] = _settings._post_nms_top_n,
) -> typing.List[Detection]:
    """Greedy non-maximum suppression

    Detections are sorted by descending score, ties broken by the lower input index, and truncated to ``pre_top_k``.
    Each kept detection suppresses every later detection with an IoU above ``iou_threshold``. The output is truncated
    to ``post_top_k``.

    :param dets: detections
    :param iou_threshold: suppression threshold in ``(0, 1)``
    :param pre_top_k: candidates considered. ``None`` keeps all.
    :param post_top_k: detections returned. ``None`` keeps all.

    :returns: survivors in descending score order

    :raises InvalidSpecError: If the threshold is outside ``(0, 1)``
    """
    if len(dets) == 0:
        _check_threshold(iou_threshold)
        return []
    scores = numpy.array([det.score for det in dets])
    keep = nms_indices(boxes_to_array(dets), scores, iou_threshold, pre_top_k, post_top_k)
    return [dets[index] for index in keep]


def vote_penalty(support: int, min_support: int = _settings._vote_min_support) -> float:
    """Default linear score penalty ``support / min_support`` for detections below the minimum support"""
    return min(1.0, support / min_support)


def bbox_vote(
    kept: typing.Sequence[Detection],
    pool: typing.Sequence[Detection],
    iou_threshold: float = _settings._vote_threshold,
    min_support: int = _settings._vote_min_support,
    penalty: typing.Optional[float] = None,
) -> typing.List[Detection]:
    """Single pass bounding box voting

    Every kept detection is moved to the score-weighted average of the pool boxes overlapping it with an IoU of at
    least ``iou_threshold``. Detections with fewer than ``min_support`` such supporters keep their position change but
    have their score multiplied by the penalty.

    :param kept: detections surviving :meth:`nms` over ``pool``
    :param pool: candidate detections voting on the kept boxes
    :param iou_threshold: supporter overlap threshold
    :param min_support: supporters required to avoid the penalty
    :param penalty: fixed score multiplier. ``None`` uses :meth:`vote_penalty`.

    :returns: one refined detection per kept detection, in input order
    """
    if len(kept) == 0:
        return []
    kept_boxes = boxes_to_array(kept)
    pool_boxes = boxes_to_array(pool)
    pool_scores = numpy.array([det.score for det in pool], dtype=numpy.float64)
    overlaps = iou_matrix(kept_boxes, pool_boxes) if len(pool) else numpy.zeros((len(kept), 0))
    refined = []
    for index, detection in enumerate(kept):
        supporters = overlaps[index] >= iou_threshold
        weights = pool_scores[supporters]
        box = detection.box
        if weights.sum() > 0.0:
            average = (pool_boxes[supporters] * weights[:, None]).sum(axis=0) / weights.sum()
            box = Box.from_sequence(average)
        support = int(supporters.sum())
        score = detection.score
        if support < min_support:
            score *= vote_penalty(support, min_support) if penalty is None else penalty
        refined.append(Detection(box=box, score=score, class_id=detection.class_id))
    return refined


def rpn_pipeline(
    score_map: numpy.ndarray,
    delta_map: numpy.ndarray,
    anchors: typing.Union[typing.Sequence[Anchor], numpy.ndarray],
    image: typing.Tuple[int, int],
    pre_nms_top_n: int = _settings._pre_nms_top_n,
    nms_threshold: float = _settings._nms_threshold,
    post_nms_top_n: int = _settings._post_nms_top_n,
    min_size: float = 0.0,
) -> typing.List[Detection]:
    """Turn RPN objectness and regression maps into proposals

    Decode, clip, drop boxes smaller than ``min_size``, sort by objectness, keep ``pre_nms_top_n``, suppress at
    ``nms_threshold`` and keep ``post_nms_top_n``.

    :param score_map: ``(2A, h, w)`` background then foreground probabilities
    :param delta_map: ``(4A, h, w)`` regression deltas, four channels per anchor
    :param anchors: ``h * w * A`` anchors in :meth:`gen_anchors` order
    :param image: ``(height, width)``
    :param pre_nms_top_n: candidates entering suppression
    :param nms_threshold: proposal suppression threshold
    :param post_nms_top_n: proposals returned
    :param min_size: smallest accepted proposal side in pixels

    :returns: proposals with ``class_id`` 0

    :raises ShapeMismatchError: If the maps and the anchors disagree
    """
    score_map = numpy.asarray(score_map, dtype=numpy.float64)
    delta_map = numpy.asarray(delta_map, dtype=numpy.float64)
    if score_map.ndim != 3 or score_map.shape[0] % 2:
        raise ShapeMismatchError(f"Score map of shape {score_map.shape} is not (2A, h, w)")
    count = score_map.shape[0] // 2
    rows, columns = score_map.shape[1:]
    if delta_map.shape != (4 * count, rows, columns):
        raise ShapeMismatchError(f"Delta map of shape {delta_map.shape} does not match {(4 * count, rows, columns)}")
    anchor_boxes = boxes_to_array(anchors)
    if anchor_boxes.shape[0] != count * rows * columns:
        raise ShapeMismatchError(f"{anchor_boxes.shape[0]} anchors do not match {count} anchors over {rows}x{columns}")
    scores = score_map[count:].transpose(1, 2, 0).reshape(-1)
    deltas = delta_map.reshape(count, 4, rows, columns).transpose(2, 3, 0, 1).reshape(-1, 4)
    boxes = decode_array(anchor_boxes, deltas, image)
    if min_size > 0.0:
        large = ((boxes[:, 2] - boxes[:, 0]) >= min_size) & ((boxes[:, 3] - boxes[:, 1]) >= min_size)
        boxes = boxes[large]
        scores = scores[large]
    keep = nms_indices(boxes, scores, nms_threshold, pre_nms_top_n, post_nms_top_n)
    return [Detection(Box.from_sequence(boxes[index]), float(scores[index])) for index in keep]


def postprocess_detections(
    rois: typing.Sequence[BoxLike],
    class_scores: numpy.ndarray,
    bbox_deltas: numpy.ndarray,
    image: typing.Tuple[int, int],
    score_threshold: float = _settings._score_threshold,
    nms_threshold: float = _settings._nms_threshold,
    max_per_image: int = _settings._max_per_image,
    vote: bool = False,
    vote_threshold: float = _settings._vote_threshold,
    min_support: int = _settings._vote_min_support,
    penalty: typing.Optional[float] = None,
) -> typing.List[Detection]:
    """Per-class classifier post-processing

    Each foreground class decodes its own regression of every ROI, keeps scores above ``score_threshold``, runs its
    own suppression and optionally votes with the class candidates. Class 0 is background.

    :param rois: proposals fed to the classifier
    :param class_scores: ``R x K`` class probabilities
    :param bbox_deltas: ``R x 4K`` class-specific deltas
    :param image: ``(height, width)``
    :param score_threshold: smallest kept class probability
    :param nms_threshold: per-class suppression threshold
    :param max_per_image: detections returned across classes
    :param vote: apply :meth:`bbox_vote` to each class survivor set
    :param vote_threshold: voting supporter threshold
    :param min_support: voting support threshold
    :param penalty: voting penalty, ``None`` for linear

    :returns: detections sorted by descending score
    """
    roi_boxes = boxes_to_array(rois)
    class_scores = numpy.asarray(class_scores, dtype=numpy.float64).reshape(roi_boxes.shape[0], -1)
    classes = class_scores.shape[1]
    bbox_deltas = numpy.asarray(bbox_deltas, dtype=numpy.float64).reshape(roi_boxes.shape[0], 4 * classes)
    detections: typing.List[Detection] = []
    for class_id in range(1, classes):
        boxes = decode_array(roi_boxes, bbox_deltas[:, 4 * class_id : 4 * class_id + 4], image)
        scores = class_scores[:, class_id]
        candidates = [
            Detection(Box.from_sequence(boxes[index]), float(scores[index]), class_id)
            for index in numpy.flatnonzero(scores > score_threshold)
        ]
        kept = nms(candidates, nms_threshold, pre_top_k=None, post_top_k=None)
        if vote:
            kept = bbox_vote(kept, candidates, vote_threshold, min_support, penalty)
        detections.extend(kept)
    order = numpy.argsort(-numpy.array([det.score for det in detections]), kind="stable")
    return [detections[index] for index in order[:max_per_image]]


@dataclasses.dataclass(frozen=True)
class SimulatedMaps:
    """RPN maps of a synthetic scene

    :param score_map: ``(2A, h, w)`` background and foreground probabilities
    :param delta_map: ``(4A, h, w)`` regression deltas
    :param anchors: ``h * w * A x 4`` anchor corners
    :param image: ``(height, width)``
    :param objects: planted object boxes
    """

    score_map: numpy.ndarray
    delta_map: numpy.ndarray
    anchors: numpy.ndarray
    image: typing.Tuple[int, int]
    objects: typing.List[Box]


def simulate_rpn_maps(
    scene: typing.Mapping[str, typing.Any], seed: typing.Optional[int] = None
) -> SimulatedMaps:
    """Build RPN maps for planted objects

    The foreground probability of an anchor is its best IoU with a planted object plus uniform noise of amplitude
    ``scene["noise"]``, clipped to ``[0, 1]``. Anchors overlapping an object regress exactly onto it.

    :param scene: ``{"image": [height, width], "objects": [[x1, y1, x2, y2], ...]}``. Objects may also be
        ``{"box": [x1, y1, x2, y2]}`` mappings. Optional keys are ``feat_stride``, ``scales``, ``ratios``, ``noise`` and
        ``seed``
    :param seed: random seed overriding ``scene["seed"]``

    :returns: simulated maps

    :raises InvalidSpecError: If the scene lacks an image size or objects
    """
    try:
        height, width = (int(value) for value in scene["image"])
        objects = [
            Box.from_sequence(item["box"] if isinstance(item, dict) else item) for item in scene["objects"]
        ]
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidSpecError(f"Scene requires 'image' [height, width] and 'objects' boxes: {err}")
    stride = int(scene.get("feat_stride", _settings._feat_stride))
    scales = scene.get("scales", _settings._anchor_scales)
    ratios = scene.get("ratios", _settings._anchor_ratios)
    noise = float(scene.get("noise", 0.0))
    seed = scene.get("seed", _settings._default_seed) if seed is None else seed
    rows, columns = math.ceil(height / stride), math.ceil(width / stride)
    count = len(scales) * len(ratios)
    anchors = anchor_grid(scales, ratios, stride, (rows, columns))
    object_boxes = boxes_to_array(objects)
    overlaps = iou_matrix(anchors, object_boxes) if objects else numpy.zeros((anchors.shape[0], 1))
    best = overlaps.argmax(axis=1)
    foreground = overlaps.max(axis=1)
    rng = numpy.random.default_rng(seed)
    foreground = numpy.clip(foreground + noise * rng.uniform(-1.0, 1.0, size=foreground.shape), 0.0, 1.0)
    deltas = numpy.zeros_like(anchors)
    matched = foreground > 0.0
    if objects:
        matched &= overlaps.max(axis=1) > 0.0
        deltas[matched] = encode_boxes(anchors[matched], object_boxes[best[matched]])
    score_map = numpy.concatenate(
        [
            (1.0 - foreground).reshape(rows, columns, count).transpose(2, 0, 1),
            foreground.reshape(rows, columns, count).transpose(2, 0, 1),
        ]
    )
    delta_map = deltas.reshape(rows, columns, count, 4).transpose(2, 3, 0, 1).reshape(4 * count, rows, columns)
    return SimulatedMaps(
        score_map=score_map, delta_map=delta_map, anchors=anchors, image=(height, width), objects=objects
    )


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

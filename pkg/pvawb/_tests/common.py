import typing

import numpy

from pvawb.graph_ir import LayerKind, LayerNode, NetworkGraph, TensorShape


def numeric_gradient(
    function: typing.Callable[[], float], array: numpy.ndarray, epsilon: float = 1e-6
) -> numpy.ndarray:
    """Central finite difference gradient of a scalar function with respect to an array modified in place

    :param function: scalar function reading ``array``
    :param array: array perturbed one element at a time
    :param epsilon: step

    :return: gradient with the shape of ``array``
    """
    gradient = numpy.zeros_like(array)
    flat = array.reshape(-1)
    flat_gradient = gradient.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + epsilon
        plus = function()
        flat[index] = original - epsilon
        minus = function()
        flat[index] = original
        flat_gradient[index] = (plus - minus) / (2.0 * epsilon)
    return gradient


def relative_error(analytic: numpy.ndarray, numeric: numpy.ndarray) -> float:
    """Largest element-wise relative error with an absolute floor for near-zero gradients"""
    scale = numpy.maximum(numpy.maximum(numpy.abs(analytic), numpy.abs(numeric)), 1.0)
    return float(numpy.max(numpy.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def random_boxes(rng: numpy.random.Generator, count: int, extent: float = 100.0) -> numpy.ndarray:
    """``count x 4`` boxes with positive width and height inside ``[0, extent + 50]``"""
    corners = rng.uniform(0.0, extent, size=(count, 2))
    sizes = rng.uniform(1.0, 50.0, size=(count, 2))
    return numpy.concatenate([corners, corners + sizes], axis=1)


def pair_iou(first: typing.Sequence[float], second: typing.Sequence[float]) -> float:
    """Scalar intersection over union reference"""
    width = max(0.0, min(first[2], second[2]) - max(first[0], second[0]))
    height = max(0.0, min(first[3], second[3]) - max(first[1], second[1]))
    intersection = width * height
    union = (
        (first[2] - first[0]) * (first[3] - first[1]) + (second[2] - second[0]) * (second[3] - second[1]) - intersection
    )
    return intersection / union if union > 0.0 else 0.0


def brute_force_nms(boxes: numpy.ndarray, scores: numpy.ndarray, threshold: float) -> typing.Set[int]:
    """Keep a box when no higher ranked kept box overlaps it above the threshold"""
    order = sorted(range(len(scores)), key=lambda index: (-scores[index], index))
    kept: typing.List[int] = []
    for index in order:
        if all(pair_iou(boxes[index], boxes[other]) <= threshold for other in kept):
            kept.append(index)
    return set(kept)


def brute_force_vote(
    kept: numpy.ndarray,
    kept_scores: numpy.ndarray,
    pool: numpy.ndarray,
    pool_scores: numpy.ndarray,
    threshold: float,
    min_support: int,
) -> typing.List[typing.Tuple[typing.List[float], float]]:
    """Score weighted box average over the pool members overlapping each kept box at or above the threshold"""
    refined = []
    for box, score in zip(kept, kept_scores):
        total = 0.0
        weighted = [0.0, 0.0, 0.0, 0.0]
        support = 0
        for other, weight in zip(pool, pool_scores):
            if pair_iou(box, other) >= threshold:
                support += 1
                total += weight
                weighted = [accumulated + weight * value for accumulated, value in zip(weighted, other)]
        average = [value / total for value in weighted] if total > 0.0 else list(box)
        if support < min_support:
            score = score * min(1.0, support / min_support)
        refined.append((average, score))
    return refined


def chain_graph(
    layers: typing.Sequence[typing.Tuple[str, int, int]],
    size: int = 16,
    channels: int = 1,
) -> NetworkGraph:
    """Single path graph of ``(kind, kernel, stride)`` layers with ``kind`` one of ``conv`` or ``pool``

    Every convolution keeps ``channels`` channels and uses same padding.
    """
    nodes = [LayerNode("input", LayerKind.INPUT, out_channels=channels)]
    source = "input"
    for index, (kind, kernel, stride) in enumerate(layers, start=1):
        name = f"layer{index}"
        if kind == "conv":
            node = LayerNode(
                name,
                LayerKind.CONV,
                (source,),
                kernel=(kernel, kernel),
                stride=stride,
                pad=kernel // 2,
                out_channels=channels,
            )
        else:
            node = LayerNode(name, LayerKind.MAX_POOL, (source,), kernel=(kernel, kernel), stride=stride)
        nodes.append(node)
        source = name
    return NetworkGraph(name="chain", nodes=tuple(nodes), input_shape=TensorShape(size, size, channels))

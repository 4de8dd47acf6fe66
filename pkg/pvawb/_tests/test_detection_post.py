"""Test anchors, box coding, suppression and voting"""

import math
from contextlib import nullcontext as does_not_raise

import numpy
import pytest

from pvawb import _settings
from pvawb import detection_post
from pvawb._tests import common
from pvawb.detection_post import Box, Detection
from pvawb.exceptions import (
    InvalidBoxError,
    InvalidSpecError,
    NonFiniteValueError,
    OverflowGuardError,
    ShapeMismatchError,
)


boxes = {
    "valid": ((0.0, 0.0, 2.0, 3.0), does_not_raise()),
    "degenerate": ((1.0, 1.0, 1.0, 1.0), does_not_raise()),
    "inverted x": ((2.0, 0.0, 1.0, 3.0), pytest.raises(InvalidBoxError)),
    "inverted y": ((0.0, 3.0, 2.0, 1.0), pytest.raises(InvalidBoxError)),
    "nan": ((0.0, math.nan, 2.0, 3.0), pytest.raises(InvalidBoxError)),
}


@pytest.mark.parametrize(
    "corners, outcome",
    boxes.values(),
    ids=boxes.keys(),
)
def test_box(corners, outcome):
    with outcome:
        box = Box(*corners)
        assert box.area == (corners[2] - corners[0]) * (corners[3] - corners[1])


detection_scores = {
    "zero": (0.0, does_not_raise()),
    "one": (1.0, does_not_raise()),
    "above one": (1.5, pytest.raises(InvalidBoxError)),
    "negative": (-0.1, pytest.raises(InvalidBoxError)),
    "nan": (math.nan, pytest.raises(InvalidBoxError)),
}


@pytest.mark.parametrize(
    "score, outcome",
    detection_scores.values(),
    ids=detection_scores.keys(),
)
def test_detection_score(score, outcome):
    with outcome:
        Detection(Box(0.0, 0.0, 1.0, 1.0), score)


def test_detection_json_line():
    detection = Detection(Box(1.0, 2.0, 3.0, 4.0), 0.5, class_id=7)
    line = detection.to_json_line()
    assert '"class_id": 7' in line
    assert Detection.from_dict(detection.to_dict()) == detection


def test_gen_anchors_single_cell():
    anchors = detection_post.gen_anchors()
    assert len(anchors) == 42
    assert len(_settings._anchor_scales) * len(_settings._anchor_ratios) == 42
    square = anchors[3]
    assert (square.scale_index, square.ratio_index) == (0, 3)
    assert square.box.to_list() == [-8.0, -8.0, 24.0, 24.0]
    for anchor in anchors:
        scale = _settings._anchor_scales[anchor.scale_index]
        ratio = _settings._anchor_ratios[anchor.ratio_index]
        assert anchor.box.area == pytest.approx(scale**2)
        assert anchor.box.width / anchor.box.height == pytest.approx(ratio)
        assert anchor.box.center == pytest.approx((8.0, 8.0))


def test_gen_anchors_grid():
    anchors = detection_post.gen_anchors(feat_size=(2, 3))
    assert len(anchors) == 2 * 3 * 42
    assert anchors[42].cell == (0, 1)
    assert anchors[42].box.center == pytest.approx((24.0, 8.0))
    assert anchors[3 * 42].cell == (1, 0)
    assert anchors[3 * 42].box.center == pytest.approx((8.0, 24.0))
    numpy.testing.assert_array_equal(
        detection_post.boxes_to_array(anchors), detection_post.anchor_grid(feat_size=(2, 3))
    )
    with pytest.raises(InvalidSpecError):
        detection_post.gen_anchors(scales=[])


pair_iou = {
    "identical": (Box(0.0, 0.0, 2.0, 2.0), Box(0.0, 0.0, 2.0, 2.0), 1.0),
    "diagonal overlap": (Box(0.0, 0.0, 2.0, 2.0), Box(1.0, 1.0, 3.0, 3.0), 1.0 / 7.0),
    "contained": (Box(0.0, 0.0, 4.0, 4.0), Box(1.0, 1.0, 3.0, 3.0), 0.25),
    "touching": (Box(0.0, 0.0, 1.0, 1.0), Box(1.0, 0.0, 2.0, 1.0), 0.0),
    "both empty": (Box(1.0, 1.0, 1.0, 1.0), Box(1.0, 1.0, 1.0, 1.0), 0.0),
}


@pytest.mark.parametrize(
    "first, second, expected",
    pair_iou.values(),
    ids=pair_iou.keys(),
)
def test_iou(first, second, expected):
    assert detection_post.iou(first, second) == pytest.approx(expected)
    assert detection_post.iou(second, first) == pytest.approx(expected)


def test_iou_matrix_matches_reference(rng):
    first = common.random_boxes(rng, 12)
    second = common.random_boxes(rng, 9)
    matrix = detection_post.iou_matrix(first, second)
    assert matrix.shape == (12, 9)
    for row in range(12):
        for column in range(9):
            assert matrix[row, column] == pytest.approx(common.pair_iou(first[row], second[column]))


def test_decode_boxes():
    anchors = [Box(0.0, 0.0, 10.0, 20.0)]
    unchanged = detection_post.decode_boxes(anchors, numpy.zeros((1, 4)), image=(100, 100))
    assert unchanged == anchors
    moved = detection_post.decode_boxes(anchors, numpy.array([[0.5, 0.25, math.log(2.0), 0.0]]), image=(100, 100))
    assert moved[0].to_list() == pytest.approx([0.0, 5.0, 20.0, 25.0])
    clipped = detection_post.decode_boxes(anchors, numpy.array([[-1.0, 0.0, 0.0, 0.0]]), image=(100, 100))
    assert clipped[0].to_list() == pytest.approx([0.0, 0.0, 0.0, 20.0])


decode_errors = {
    "at guard": (numpy.array([[0.0, 0.0, 50.0, 50.0]]), does_not_raise()),
    "above guard": (numpy.array([[0.0, 0.0, 0.0, 50.5]]), pytest.raises(OverflowGuardError)),
    "not finite": (numpy.array([[math.nan, 0.0, 0.0, 0.0]]), pytest.raises(NonFiniteValueError)),
    "count mismatch": (numpy.zeros((2, 4)), pytest.raises(ShapeMismatchError)),
}


@pytest.mark.parametrize(
    "deltas, outcome",
    decode_errors.values(),
    ids=decode_errors.keys(),
)
def test_decode_errors(deltas, outcome):
    with outcome:
        decoded = detection_post.decode_boxes([Box(0.0, 0.0, 4.0, 4.0)], deltas, image=(8, 8))
        assert decoded[0].to_list() == [0.0, 0.0, 8.0, 8.0]


def test_encode_inverts_decode(rng):
    anchors = common.random_boxes(rng, 20)
    targets = common.random_boxes(rng, 20)
    deltas = detection_post.encode_boxes(anchors, targets)
    numpy.testing.assert_allclose(detection_post.decode_array(anchors, deltas), targets, atol=1e-9)
    with pytest.raises(InvalidBoxError):
        detection_post.encode_boxes([Box(0.0, 0.0, 0.0, 4.0)], [Box(0.0, 0.0, 4.0, 4.0)])


def _random_instance(rng, extent=100.0):
    count = int(rng.integers(0, 201))
    return common.random_boxes(rng, count, extent=extent), rng.uniform(0.05, 1.0, size=count)


def test_nms_matches_reference(rng):
    for _ in range(500):
        candidates, scores = _random_instance(rng)
        threshold = float(rng.choice([0.3, 0.4, 0.7]))
        kept = detection_post.nms_indices(candidates, scores, threshold)
        assert set(kept) == common.brute_force_nms(candidates, scores, threshold)
        assert [scores[index] for index in kept] == sorted(scores[kept], reverse=True)
        assert set(detection_post.nms_indices(candidates, scores**3, threshold)) == set(kept)


def test_nms_detections_match_indices(rng):
    candidates, scores = common.random_boxes(rng, 80), rng.uniform(0.0, 1.0, size=80)
    detections = [Detection(Box.from_sequence(box), float(score)) for box, score in zip(candidates, scores)]
    kept = detection_post.nms(detections, 0.4, pre_top_k=None, post_top_k=None)
    assert [detections.index(detection) for detection in kept] == detection_post.nms_indices(candidates, scores, 0.4)


def test_nms_ties_keep_lower_index():
    detections = [Detection(Box(0.0, 0.0, 10.0, 10.0), 0.5, class_id=index) for index in range(3)]
    kept = detection_post.nms(detections)
    assert [detection.class_id for detection in kept] == [0]


def test_nms_top_k():
    detections = [Detection(Box(20.0 * index, 0.0, 20.0 * index + 10.0, 10.0), 0.1 * index) for index in range(6)]
    assert [d.score for d in detection_post.nms(detections, post_top_k=2)] == pytest.approx([0.5, 0.4])
    assert [d.score for d in detection_post.nms(detections, pre_top_k=3, post_top_k=None)] == pytest.approx(
        [0.5, 0.4, 0.3]
    )


nms_thresholds = {
    "zero": (0.0, pytest.raises(InvalidSpecError)),
    "one": (1.0, pytest.raises(InvalidSpecError)),
    "inside": (0.5, does_not_raise()),
}


@pytest.mark.parametrize(
    "threshold, outcome",
    nms_thresholds.values(),
    ids=nms_thresholds.keys(),
)
def test_nms_threshold(threshold, outcome):
    with outcome:
        assert detection_post.nms([], threshold) == []


def test_bbox_vote_matches_reference(rng):
    for _ in range(500):
        candidates, scores = _random_instance(rng, extent=60.0)
        pool = [Detection(Box.from_sequence(box), float(score)) for box, score in zip(candidates, scores)]
        kept_indices = detection_post.nms_indices(candidates, scores, 0.3)
        kept = [pool[index] for index in kept_indices]
        refined = detection_post.bbox_vote(kept, pool)
        expected = common.brute_force_vote(
            candidates[kept_indices],
            scores[kept_indices],
            candidates,
            scores,
            _settings._vote_threshold,
            _settings._vote_min_support,
        )
        assert len(refined) == len(kept)
        for detection, (box, score) in zip(refined, expected):
            assert detection.box.to_list() == pytest.approx(box)
            assert detection.score == pytest.approx(score)


vote_penalties = {
    "full support": (5, None, 0.8),
    "linear penalty": (2, None, 0.8 * 2 / 5),
    "fixed penalty": (1, 0.5, 0.4),
}


@pytest.mark.parametrize(
    "supporters, penalty, expected",
    vote_penalties.values(),
    ids=vote_penalties.keys(),
)
def test_bbox_vote_penalty(supporters, penalty, expected):
    box = Box(0.0, 0.0, 10.0, 10.0)
    pool = [Detection(box, 0.8) for _ in range(supporters)] + [Detection(Box(50.0, 50.0, 60.0, 60.0), 0.9)]
    refined = detection_post.bbox_vote([pool[0]], pool, penalty=penalty)
    assert refined[0].box.to_list() == pytest.approx(box.to_list())
    assert refined[0].score == pytest.approx(expected)


def test_bbox_vote_moves_to_weighted_average():
    kept = Detection(Box(0.0, 0.0, 10.0, 10.0), 0.6)
    shifted = Detection(Box(1.0, 0.0, 11.0, 10.0), 0.2)
    refined = detection_post.bbox_vote([kept], [kept, shifted], min_support=1)
    assert refined[0].box.to_list() == pytest.approx([0.25, 0.0, 10.25, 10.0])
    assert refined[0].score == 0.6
    assert detection_post.bbox_vote([], [kept]) == []


def test_simulated_rpn_pipeline():
    scene = {"image": [160, 256], "objects": [[32.0, 32.0, 96.0, 112.0], {"box": [150.0, 40.0, 230.0, 120.0]}]}
    maps = detection_post.simulate_rpn_maps(scene)
    assert maps.score_map.shape == (84, 10, 16)
    assert maps.delta_map.shape == (168, 10, 16)
    assert maps.anchors.shape == (10 * 16 * 42, 4)
    numpy.testing.assert_allclose(maps.score_map[:42] + maps.score_map[42:], 1.0)

    proposals = detection_post.rpn_pipeline(maps.score_map, maps.delta_map, maps.anchors, maps.image)
    assert 2 <= len(proposals) <= _settings._post_nms_top_n
    top = sorted((proposal.box.to_list() for proposal in proposals[:2]), key=lambda box: box[0])
    numpy.testing.assert_allclose(top, [box.to_list() for box in maps.objects], atol=1e-6)
    assert all(proposal.score == 0.0 for proposal in proposals[2:])
    assert [proposal.score for proposal in proposals] == sorted((p.score for p in proposals), reverse=True)

    assert detection_post.rpn_pipeline(maps.score_map, maps.delta_map, maps.anchors, maps.image, min_size=500.0) == []


def test_simulated_noise_is_seeded():
    scene = {"image": [64, 64], "objects": [[8.0, 8.0, 40.0, 40.0]], "noise": 0.2}
    first = detection_post.simulate_rpn_maps(scene, seed=1)
    second = detection_post.simulate_rpn_maps(scene, seed=1)
    third = detection_post.simulate_rpn_maps(scene, seed=2)
    numpy.testing.assert_array_equal(first.score_map, second.score_map)
    assert not numpy.array_equal(first.score_map, third.score_map)
    assert first.score_map.min() >= 0.0
    assert first.score_map.max() <= 1.0


simulated_scenes = {
    "missing image": ({"objects": []}, pytest.raises(InvalidSpecError)),
    "missing objects": ({"image": [64, 64]}, pytest.raises(InvalidSpecError)),
    "malformed box": ({"image": [64, 64], "objects": [[1.0, 2.0]]}, pytest.raises(InvalidSpecError)),
    "empty scene": ({"image": [64, 64], "objects": []}, does_not_raise()),
}


@pytest.mark.parametrize(
    "scene, outcome",
    simulated_scenes.values(),
    ids=simulated_scenes.keys(),
)
def test_simulate_rpn_maps_errors(scene, outcome):
    with outcome:
        maps = detection_post.simulate_rpn_maps(scene)
        assert numpy.all(maps.score_map[42:] == 0.0)


rpn_shape_errors = {
    "odd score channels": ((3, 2, 2), (8, 2, 2), 8),
    "delta channels": ((2, 2, 2), (8, 2, 2), 4),
    "anchor count": ((2, 2, 2), (4, 2, 2), 3),
}


@pytest.mark.parametrize(
    "score_shape, delta_shape, anchors",
    rpn_shape_errors.values(),
    ids=rpn_shape_errors.keys(),
)
def test_rpn_pipeline_shape_errors(score_shape, delta_shape, anchors):
    with pytest.raises(ShapeMismatchError):
        detection_post.rpn_pipeline(
            numpy.zeros(score_shape), numpy.zeros(delta_shape), numpy.tile([0.0, 0.0, 4.0, 4.0], (anchors, 1)), (8, 8)
        )


def test_postprocess_detections():
    rois = [Box(0.0, 0.0, 10.0, 10.0), Box(50.0, 50.0, 60.0, 60.0)]
    class_scores = numpy.array([[0.1, 0.8, 0.1], [0.2, 0.01, 0.79]])
    deltas = numpy.zeros((2, 12))
    detections = detection_post.postprocess_detections(rois, class_scores, deltas, image=(100, 100))
    assert [(d.class_id, d.score) for d in detections] == [(1, 0.8), (2, 0.79), (2, 0.1)]
    assert detections[1].box == rois[1]

    capped = detection_post.postprocess_detections(rois, class_scores, deltas, image=(100, 100), max_per_image=2)
    assert len(capped) == 2

    voted = detection_post.postprocess_detections(rois, class_scores, deltas, image=(100, 100), vote=True)
    assert [d.score for d in voted] == pytest.approx([0.8 / 5, 0.79 / 5, 0.1 / 5])

"""Test the detect-sim subcommand"""

import io
import json

import pytest

from pvawb import _detect_sim
from pvawb import _settings
from pvawb import tensor_engine
from pvawb.exceptions import InputFileError, InvalidSpecError


def _run(**kwargs):
    output = io.StringIO()
    _detect_sim.main(output=output, **kwargs)
    return [json.loads(line) for line in output.getvalue().splitlines()]


def test_main_default_scene():
    proposals = _run()
    assert 2 <= len(proposals) <= _settings._post_nms_top_n
    assert set(proposals[0]) == {"class_id", "score", "x1", "y1", "x2", "y2"}
    assert all(proposal["class_id"] == 0 for proposal in proposals)
    scores = [proposal["score"] for proposal in proposals]
    assert scores == sorted(scores, reverse=True)
    assert all(0.0 <= proposal["x1"] <= proposal["x2"] <= 480.0 for proposal in proposals)
    assert all(0.0 <= proposal["y1"] <= proposal["y2"] <= 320.0 for proposal in proposals)


def test_main_proposal_limit():
    assert len(_run(proposals=3)) == 3


def test_saved_maps_reproduce_proposals(tmp_path):
    maps_file = tmp_path / "maps.weights"
    simulated = _run(save_maps=maps_file)
    assert _run(maps_file=maps_file) == simulated


def test_main_scene_file(tmp_path):
    scene_file = tmp_path / "scene.yaml"
    scene_file.write_text("image: [64, 64]\nobjects:\n  - [8.0, 8.0, 40.0, 40.0]\n")
    proposals = _run(scene_file=scene_file)
    assert [proposals[0][key] for key in ("x1", "y1", "x2", "y2")] == pytest.approx([8.0, 8.0, 40.0, 40.0])


def test_main_errors(tmp_path):
    with pytest.raises(InputFileError):
        _run(scene_file=tmp_path / "missing.yaml")
    scene_file = tmp_path / "scene.yaml"
    scene_file.write_text("image: [64, 64]\n")
    with pytest.raises(InvalidSpecError):
        _run(scene_file=scene_file)
    maps_file = tmp_path / "empty.weights"
    tensor_engine.WeightStore().save(maps_file)
    with pytest.raises(InputFileError):
        _run(maps_file=maps_file)

"""Internal API module implementing the ``detect-sim`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import sys
import typing
import pathlib
import argparse

from pvawb import _settings
from pvawb import _utilities
from pvawb import detection_post
from pvawb import tensor_engine
from pvawb.exceptions import InputFileError


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the detect-sim subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    source_group = parser.add_mutually_exclusive_group()
    source_group.add_argument(
        "--scene",
        type=pathlib.Path,
        default=_settings._synthetic_scene_fixture,
        help="YAML or JSON scene with planted objects (default: %(default)s)",
    )
    source_group.add_argument(
        "--maps",
        type=pathlib.Path,
        default=None,
        help="RPN score and delta maps in the engine's binary format, replacing ``--scene`` (default: %(default)s)",
    )
    parser.add_argument(
        "--save-maps",
        type=pathlib.Path,
        default=None,
        help="Write the simulated maps in the engine's binary format (default: %(default)s)",
    )
    parser.add_argument(
        "--seed",
        type=_utilities.non_negative_int,
        default=None,
        help="Score noise seed, replacing the scene's ``seed`` (default: %(default)s)",
    )
    parser.add_argument(
        "--proposals",
        type=_utilities.positive_int,
        default=_settings._post_nms_top_n,
        help="Proposals kept after suppression (default: %(default)s)",
    )
    parser.add_argument(
        "--pre-nms",
        type=_utilities.positive_int,
        default=_settings._pre_nms_top_n,
        help="Candidates entering suppression (default: %(default)s)",
    )
    parser.add_argument(
        "--nms-threshold",
        type=float,
        default=_settings._nms_threshold,
        help="Proposal suppression IoU threshold (default: %(default)s)",
    )
    parser.add_argument(
        "--min-size",
        type=float,
        default=0.0,
        help="Smallest accepted proposal side in pixels (default: %(default)s)",
    )
    return parser


def maps_to_store(maps: detection_post.SimulatedMaps) -> tensor_engine.WeightStore:
    """Pack RPN maps and their anchors into a weight store"""
    store = tensor_engine.WeightStore()
    store.set(_settings._maps_node, "score", maps.score_map)
    store.set(_settings._maps_node, "delta", maps.delta_map)
    store.set(_settings._maps_node, "anchors", maps.anchors)
    store.meta[_settings._maps_node] = {"image": list(maps.image)}
    return store


def store_to_maps(store: tensor_engine.WeightStore) -> detection_post.SimulatedMaps:
    """Unpack RPN maps written by :meth:`maps_to_store`

    :raises InputFileError: If the store lacks the maps, the anchors or the image size
    """
    node = _settings._maps_node
    try:
        params = store[node]
        image = tuple(int(value) for value in store.meta[node]["image"])
        return detection_post.SimulatedMaps(
            score_map=params["score"],
            delta_map=params["delta"],
            anchors=params["anchors"],
            image=image,
            objects=[],
        )
    except (KeyError, TypeError, ValueError) as err:
        raise InputFileError(f"Weight store lacks the '{node}' score, delta, anchors or image entries: {err}")


def main(
    scene_file: typing.Optional[pathlib.Path] = _settings._synthetic_scene_fixture,
    maps_file: typing.Optional[pathlib.Path] = None,
    save_maps: typing.Optional[pathlib.Path] = None,
    seed: typing.Optional[int] = None,
    proposals: int = _settings._post_nms_top_n,
    pre_nms: int = _settings._pre_nms_top_n,
    nms_threshold: float = _settings._nms_threshold,
    min_size: float = 0.0,
    output: typing.Optional[typing.TextIO] = None,
) -> None:
    """Print RPN proposals as JSON lines

    :param scene_file: synthetic scene, used when ``maps_file`` is ``None``
    :param maps_file: stored RPN maps
    :param save_maps: destination of the simulated maps
    :param seed: score noise seed
    :param proposals: proposals kept after suppression
    :param pre_nms: candidates entering suppression
    :param nms_threshold: suppression threshold
    :param min_size: smallest accepted proposal side
    :param output: JSON lines stream, STDOUT when ``None``

    :raises InputFileError: If the scene or maps file is missing or malformed
    :raises InvalidSpecError: If the scene lacks an image size or objects
    """
    output = sys.stdout if output is None else output
    if maps_file is not None:
        maps = store_to_maps(tensor_engine.WeightStore.load(maps_file))
    else:
        scene = _utilities.load_yaml_file(scene_file)
        maps = detection_post.simulate_rpn_maps(scene, seed=seed)
        if save_maps is not None:
            maps_to_store(maps).save(save_maps)
    detections = detection_post.rpn_pipeline(
        maps.score_map,
        maps.delta_map,
        maps.anchors,
        maps.image,
        pre_nms_top_n=pre_nms,
        nms_threshold=nms_threshold,
        post_nms_top_n=proposals,
        min_size=min_size,
    )
    for detection in detections:
        output.write(detection.to_json_line() + "\n")


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

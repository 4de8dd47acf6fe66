"""Internal API module implementing the ``build`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import json
import typing
import pathlib
import argparse

from pvawb import _settings
from pvawb import _utilities
from pvawb import net_builders
from pvawb.graph_ir import NetworkGraph, TensorShape, merge_graphs, require_valid
from pvawb.exceptions import ChoicesError


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the build subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "NETWORK",
        choices=_settings._allowable_networks,
        help="Network to emit as a graph description file",
    )
    parser.add_argument(
        "-o",
        "--output-file",
        type=pathlib.Path,
        default=None,
        help="Graph description file. Printed to STDOUT when omitted (default: %(default)s)",
    )
    parser.add_argument(
        "--input",
        type=_utilities.shape_type,
        default=None,
        help="Replace the network's input shape, as HxWxC (default: %(default)s)",
    )
    parser.add_argument(
        "--rank",
        type=_utilities.positive_int,
        default=_settings._default_rank,
        help="fc6 and fc7 factorization rank of ``classifier_compressed`` (default: %(default)s)",
    )
    return parser


def build_network(network: str, rank: int = _settings._default_rank) -> NetworkGraph:
    """Build one of the named networks

    :param network: one of ``_settings._allowable_networks``
    :param rank: factorization rank of ``classifier_compressed``

    :returns: graph

    :raises ChoicesError: If the network name is unknown
    """
    if network == "pvanet":
        return net_builders.build_pvanet_feature_extractor()
    if network == "rpn":
        return net_builders.build_rpn_head()
    if network in ("classifier", "classifier_compressed"):
        _, classifier = net_builders.build_detection_heads(compressed=network == "classifier_compressed", rank=rank)
        return classifier
    if network == "pvanet_rpn":
        return merge_graphs(network, net_builders.build_pvanet_feature_extractor(), net_builders.build_rpn_head())
    if network.startswith("allcnn_") and network in _settings._allowable_networks:
        return net_builders.build_allcnn_variant(network[len("allcnn_") :])
    if network == "inception_chain":
        return net_builders.build_inception_chain()
    if network.startswith("toy_") and network in _settings._allowable_networks:
        return net_builders.build_toy_crelu_net(network[len("toy_") :])
    raise ChoicesError(f"Unknown network '{network}', choose from {_settings._allowable_networks}")


def main(
    network: str,
    output_file: typing.Optional[pathlib.Path] = None,
    input_shape: typing.Optional[TensorShape] = None,
    rank: int = _settings._default_rank,
) -> None:
    """Write a built network as a graph description file

    :param network: network name
    :param output_file: destination, STDOUT when ``None``
    :param input_shape: input shape replacing the built one
    :param rank: factorization rank of ``classifier_compressed``

    :raises GraphValidationError: If the input shape override breaks the graph
    """
    graph = build_network(network, rank=rank)
    if input_shape is not None:
        graph = graph.replace(input_shape=input_shape)
    require_valid(graph)
    _utilities.write_text(json.dumps(graph.to_dict(), indent=2), output_file)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""Internal API module implementing the ``compress`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse

from pvawb import _settings
from pvawb import _utilities
from pvawb import low_rank
from pvawb import cost_model
from pvawb import tensor_engine
from pvawb.graph_ir import save_graph
from pvawb.exceptions import APIError


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the compress subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "GRAPH_FILE",
        type=pathlib.Path,
        help="Graph description file holding the fully-connected layers, e.g. the classifier head",
    )
    parser.add_argument(
        "--rank",
        type=_utilities.positive_int,
        default=_settings._default_rank,
        help="Retained rank (default: %(default)s)",
    )
    parser.add_argument(
        "--layers",
        nargs="+",
        default=list(_settings._compressed_layers),
        help="Fully-connected layers to factorize (default: %(default)s)",
    )
    parser.add_argument(
        "--weights",
        type=pathlib.Path,
        default=None,
        # fmt: off
        help="Trained weights in the engine's binary format. Without weights only the graph is rewritten "
             "(default: %(default)s)",
        # fmt: on
    )
    parser.add_argument(
        "--output-weights",
        type=pathlib.Path,
        default=None,
        help="Write the factorized weights, requires ``--weights`` (default: %(default)s)",
    )
    parser.add_argument(
        "-o",
        "--output-file",
        type=pathlib.Path,
        default=None,
        help="Write the rewritten graph description file (default: %(default)s)",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print a JSON report (default: %(default)s)",
    )
    return parser


def main(
    graph_file: pathlib.Path,
    rank: int = _settings._default_rank,
    layers: typing.Sequence[str] = _settings._compressed_layers,
    weights_file: typing.Optional[pathlib.Path] = None,
    output_weights: typing.Optional[pathlib.Path] = None,
    output_file: typing.Optional[pathlib.Path] = None,
    json_output: bool = False,
) -> None:
    """Factorize fully-connected layers and report the multiplication savings

    :param graph_file: graph description file with an input shape
    :param rank: retained rank
    :param layers: layers to factorize
    :param weights_file: trained weights of the graph
    :param output_weights: factorized weights destination
    :param output_file: rewritten graph destination
    :param json_output: print JSON instead of text

    :raises APIError: If ``output_weights`` is requested without ``weights_file``
    :raises MissingHeadError: If a layer is absent or not fully-connected
    :raises InvalidSpecError: If the rank exceeds a layer's smaller dimension
    """
    if output_weights is not None and weights_file is None:
        raise APIError("Writing factorized weights requires the trained weights")
    graph = _utilities.load_graph_file(graph_file)
    if weights_file is not None:
        weights = tensor_engine.WeightStore.load(weights_file)
        rewritten, store = low_rank.compress_weights(graph, weights, rank=rank, layers=layers)
    else:
        rewritten = low_rank.rewrite_classifier(graph, rank=rank, layers=layers)
        store = None
    before = cost_model.graph_cost(graph)
    after = cost_model.graph_cost(rewritten)
    suffix = _settings._low_rank_suffix
    report: typing.Dict[str, typing.Any] = {
        "graph": graph.name,
        "rank": rank,
        "layers": {},
        "macs": {"dense": before.totals.macs, "factorized": after.totals.macs},
    }
    for name in layers:
        entry = {
            "dense_macs": before.per_node[name].macs,
            "factorized_macs": after.per_node[f"{name}{suffix}"].macs + after.per_node[name].macs,
        }
        if store is not None:
            entry.update(store.meta[name])
        report["layers"][name] = entry
    if output_file is not None:
        save_graph(rewritten, output_file)
    if store is not None and output_weights is not None:
        store.save(output_weights)
    if json_output:
        _utilities.write_json(report)
        return
    print(f"{graph.name}: rank {rank}, {report['macs']['dense']} -> {report['macs']['factorized']} MAC")
    for name, entry in report["layers"].items():
        line = f"{name}: {entry['dense_macs']} -> {entry['factorized_macs']} MAC"
        if "tail" in entry:
            line += f", reconstruction error {entry['tail']:.6g}"
        print(line)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""Internal API module implementing the ``rf`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse

from pvawb import _utilities
from pvawb import receptive_field
from pvawb.graph_ir import TensorShape
from pvawb.exceptions import APIError


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the rf subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "GRAPH_FILE",
        type=pathlib.Path,
        help="Graph description file",
    )
    parser.add_argument(
        "--node",
        type=str,
        default=None,
        help="Analyzed node. Defaults to the last node of the graph (default: %(default)s)",
    )
    parser.add_argument(
        "--max-paths",
        type=_utilities.positive_int,
        default=None,
        # fmt: off
        help="Fail when the node has more input paths than this cap. Counts without a cap when omitted "
             "(default: %(default)s)",
        # fmt: on
    )
    output_group = parser.add_mutually_exclusive_group()
    output_group.add_argument(
        "--json",
        action="store_true",
        help="Print the distribution as JSON (default: %(default)s)",
    )
    output_group.add_argument(
        "--histogram",
        action="store_true",
        help="Print the distribution as a text histogram (default: %(default)s)",
    )
    parser.add_argument(
        "--empirical",
        action="store_true",
        # fmt: off
        help="Also measure the receptive field width of the node's center output by perturbing input columns. "
             "Worker threads are capped by ``PVAWB_THREADS`` (default: %(default)s)",
        # fmt: on
    )
    parser.add_argument(
        "--input",
        type=_utilities.shape_type,
        default=None,
        help="Input shape as HxWxC for ``--empirical`` (default: %(default)s)",
    )
    parser.add_argument(
        "--plot",
        type=pathlib.Path,
        default=None,
        help="Save a bar chart of the distribution to this file (default: %(default)s)",
    )
    return parser


def main(
    graph_file: pathlib.Path,
    node: typing.Optional[str] = None,
    max_paths: typing.Optional[int] = None,
    json_output: bool = False,
    histogram: bool = False,
    empirical: bool = False,
    input_shape: typing.Optional[TensorShape] = None,
    plot: typing.Optional[pathlib.Path] = None,
) -> None:
    """Print the receptive field distribution of a node

    Without ``--json`` or ``--histogram`` a one line summary is printed.

    :param graph_file: graph description file
    :param node: analyzed node, the graph output when ``None``
    :param max_paths: path count cap
    :param json_output: print JSON
    :param histogram: print a text histogram
    :param empirical: add the measured receptive field width
    :param input_shape: input shape override for the measurement
    :param plot: bar chart file

    :raises APIError: If the node does not exist
    :raises PathExplosionError: If the node has more paths than ``max_paths``
    """
    graph = _utilities.load_graph_file(graph_file, input_shape)
    node = graph.output_name if node is None else node
    if node not in graph:
        raise APIError(f"Graph '{graph.name}' has no node named '{node}'")
    distribution = receptive_field.rf_distribution(graph, node, max_paths=max_paths)
    measured = receptive_field.empirical_rf(graph, node) if empirical else None
    if json_output:
        data = distribution.to_dict()
        if measured is not None:
            data["empirical"] = measured
        _utilities.write_json(data)
    elif histogram:
        print(distribution.histogram())
    else:
        print(
            f"{node}: {distribution.total_paths} paths, rf min {distribution.min}, max {distribution.max}, "
            f"mean {distribution.mean:.2f}"
        )
    if measured is not None and not json_output:
        print(f"empirical rf: {measured}")
    if plot is not None:
        from pvawb import _visualize

        _visualize.plot(_visualize.rf_figure(distribution), plot)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""Internal API module implementing the ``shapes`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse

import pandas

from pvawb import _utilities
from pvawb.graph_ir import TensorShape, infer_shapes, require_valid


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the shapes subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "GRAPH_FILE",
        type=pathlib.Path,
        help="Graph description file",
    )
    parser.add_argument(
        "--input",
        type=_utilities.shape_type,
        default=None,
        help="Input shape as HxWxC, replacing the file's input field (default: %(default)s)",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print a JSON node to shape mapping (default: %(default)s)",
    )
    return parser


def main(
    graph_file: pathlib.Path,
    input_shape: typing.Optional[TensorShape] = None,
    json_output: bool = False,
) -> None:
    """Print the validated, shape-inferred output shape of every node

    :param graph_file: graph description file
    :param input_shape: input shape override
    :param json_output: print JSON instead of a table

    :raises InputFileError: If the graph file is missing or malformed
    :raises GraphValidationError: If the graph fails structural validation
    """
    graph = _utilities.load_graph_file(graph_file, input_shape)
    require_valid(graph)
    shapes = infer_shapes(graph)
    if json_output:
        _utilities.write_json({name: shape.to_dict() for name, shape in shapes.items()})
        return
    table = pandas.DataFrame(
        {
            "kind": [node.kind.value for node in graph.nodes],
            "output_size": [str(shapes[node.name]) for node in graph.nodes],
        },
        index=pandas.Index(graph.names, name="node"),
    )
    print(f"{graph.name}: {len(graph)} nodes, input {shapes[graph.input_name]}")
    print(table.to_string())


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

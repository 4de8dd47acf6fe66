"""Internal API module implementing the ``cost`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse

from pvawb import _settings
from pvawb import _utilities
from pvawb import cost_model
from pvawb import net_builders
from pvawb.graph_ir import TensorShape


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the cost subcommand

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
        "--rounding",
        choices=_settings._allowable_rounding,
        default=_settings._default_rounding,
        help="Table rounded cells, or exact integers alongside them (default: %(default)s)",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print a JSON report (default: %(default)s)",
    )
    parser.add_argument(
        "--detection",
        action="store_true",
        # fmt: off
        help="Add the GMAC breakdown of the graph as shared feature extractor with the RPN and classifier heads "
             "(default: %(default)s)",
        # fmt: on
    )
    parser.add_argument(
        "--proposals",
        type=_utilities.non_negative_int,
        default=_settings._default_proposals,
        help="ROIs fed to the classifier head of ``--detection`` (default: %(default)s)",
    )
    parser.add_argument(
        "--rank",
        type=_utilities.positive_int,
        default=None,
        help="Compress the classifier head fc6 and fc7 to this rank for ``--detection`` (default: %(default)s)",
    )
    return parser


def detection_breakdown(
    report: cost_model.CostReport,
    proposals: int = _settings._default_proposals,
    rank: typing.Optional[int] = None,
) -> cost_model.DetectionCost:
    """Cost the detection heads on top of a feature extractor report

    :param report: feature extractor cost report
    :param proposals: ROIs fed to the classifier
    :param rank: fc6 and fc7 rank, dense heads when ``None``

    :returns: breakdown
    """
    compressed = rank is not None
    rpn, classifier = net_builders.build_detection_heads(
        compressed=compressed,
        rank=rank if compressed else _settings._default_rank,
        input_shape=report.output_shape,
    )
    return cost_model.detection_cost(report, rpn, classifier, n_proposals=proposals)


def main(
    graph_file: pathlib.Path,
    input_shape: typing.Optional[TensorShape] = None,
    rounding: str = _settings._default_rounding,
    json_output: bool = False,
    detection: bool = False,
    proposals: int = _settings._default_proposals,
    rank: typing.Optional[int] = None,
) -> None:
    """Print the parameter and MAC report of a graph

    :param graph_file: graph description file
    :param input_shape: input shape override
    :param rounding: ``table`` or ``exact``
    :param json_output: print JSON instead of a table
    :param detection: append the detection GMAC breakdown
    :param proposals: ROIs of the detection breakdown
    :param rank: classifier compression rank of the detection breakdown

    :raises InputFileError: If the graph file is missing or malformed
    """
    graph = _utilities.load_graph_file(graph_file, input_shape)
    report = cost_model.graph_cost(graph, rounding=rounding)
    breakdown = detection_breakdown(report, proposals, rank) if detection else None
    if json_output:
        data = report.to_dict()
        if breakdown is not None:
            data["detection"] = {
                "proposals": proposals,
                "rank": rank,
                "macs": {
                    "shared_cnn": breakdown.shared_cnn,
                    "rpn": breakdown.rpn,
                    "classifier": breakdown.classifier,
                    "total": breakdown.total,
                },
                "gmac": breakdown.gmac(rounding),
            }
        _utilities.write_json(data)
        return
    print(f"{report.graph_name} at {report.input_shape}")
    print(report.to_text())
    if breakdown is not None:
        gmac = breakdown.gmac(rounding)
        print(f"\nGMAC with {proposals} proposals" + (f", fc6/fc7 rank {rank}" if rank is not None else ""))
        for key in ("shared_cnn", "rpn", "classifier", "total"):
            print(f"{key:>10}: {gmac[key]:.1f}" if rounding == "table" else f"{key:>10}: {gmac[key]:.6f}")


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""Internal API module implementing the ``verify`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse
import dataclasses

from pvawb import _settings
from pvawb import _utilities
from pvawb import _cost
from pvawb import cost_model
from pvawb import net_builders
from pvawb.graph_ir import TensorShape
from pvawb.exceptions import InputFileError, NegativeDimensionError


_exclude_from_namespace = set(globals().keys())

_ROW_COLUMNS = ("output_size", "params", "mac")
_GMAC_COLUMNS = ("shared_cnn", "rpn", "classifier", "total")


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the verify subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--fixture",
        type=pathlib.Path,
        default=_settings._structure_table_fixture,
        help="Expected structure table and GMAC breakdown (default: %(default)s)",
    )
    parser.add_argument(
        "--rounding",
        choices=_settings._allowable_rounding,
        default=_settings._default_rounding,
        help="Report table rounded cells, or exact integers alongside them (default: %(default)s)",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print a JSON report (default: %(default)s)",
    )
    return parser


@dataclasses.dataclass(frozen=True)
class CellDiff:
    """One fixture cell that the computed table does not reproduce"""

    row: str
    column: str
    expected: str
    actual: str

    def __str__(self) -> str:
        return f"{self.row} {self.column}: expected '{self.expected}', got '{self.actual}'"


def load_fixture(path: pathlib.Path) -> typing.Dict[str, typing.Any]:
    """Read and check the layout of a structure table fixture

    :raises InputFileError: If the file is missing or lacks the ``input``, ``rows`` or ``total`` keys
    """
    fixture = _utilities.load_yaml_file(path)
    missing = [key for key in ("input", "rows", "total") if key not in fixture]
    if missing:
        raise InputFileError(f"'{path}' lacks the fixture keys {missing}")
    try:
        fixture["input"] = TensorShape.from_text(str(fixture["input"]))
    except (ValueError, NegativeDimensionError) as err:
        raise InputFileError(f"'{path}' has an invalid input shape: {err}")
    return fixture


def _text(value: typing.Any) -> str:
    return "" if value is None else str(value)


def _gmac_text(value: typing.Any) -> str:
    return f"{float(value):.1f}"


def compare(
    fixture: typing.Mapping[str, typing.Any], report: cost_model.CostReport
) -> typing.Tuple[int, typing.List[CellDiff]]:
    """Diff the table rounded structure table and GMAC cells against the fixture

    :param fixture: loaded fixture
    :param report: PVANet feature extractor cost report at the fixture input

    :returns: ``(checked cell count, mismatches)``
    """
    checked = 0
    diffs: typing.List[CellDiff] = []

    def _check(row: str, column: str, expected: str, actual: str) -> None:
        nonlocal checked
        checked += 1
        if expected != actual:
            diffs.append(CellDiff(row, column, expected, actual))

    computed = {row.name: row for row in report.rows()}
    for expected in fixture["rows"]:
        name = str(expected["name"])
        row = computed.pop(name, None)
        actual = (
            {"output_size": str(row.output_size), "params": row.params_text, "mac": row.mac_text}
            if row is not None
            else {}
        )
        for column in _ROW_COLUMNS:
            _check(name, column, _text(expected.get(column)), actual.get(column, "<missing row>"))
    for name in computed:
        diffs.append(CellDiff(name, "row", "<absent>", "<unexpected row>"))

    params_text, mac_text = report.total_texts()
    _check("Total", "params", _text(fixture["total"].get("params")), params_text)
    _check("Total", "mac", _text(fixture["total"].get("mac")), mac_text)

    detection = fixture.get("detection", {})
    proposals = int(detection.get("proposals", _settings._default_proposals))
    for key, rank in (("dense", None), ("compressed", detection.get("rank", _settings._default_rank))):
        if key not in detection:
            continue
        gmac = _cost.detection_breakdown(report, proposals, rank).gmac("table")
        for column in _GMAC_COLUMNS:
            _check(f"GMAC {key}", column, _gmac_text(detection[key][column]), _gmac_text(gmac[column]))
    return checked, diffs


def main(
    fixture_file: pathlib.Path = _settings._structure_table_fixture,
    rounding: str = _settings._default_rounding,
    json_output: bool = False,
) -> int:
    """Build PVANet, cost it at the fixture input and diff every cell against the fixture

    :param fixture_file: expected values
    :param rounding: rendering of the printed table, the diff always uses table rounding
    :param json_output: print JSON instead of text

    :returns: number of mismatched cells

    :raises InputFileError: If the fixture is missing or malformed
    """
    fixture = load_fixture(fixture_file)
    graph = net_builders.build_pvanet_feature_extractor()
    report = cost_model.graph_cost(graph, fixture["input"], rounding=rounding)
    checked, diffs = compare(fixture, report)
    if json_output:
        _utilities.write_json(
            {
                "fixture": str(fixture_file),
                "checked": checked,
                "mismatches": [dataclasses.asdict(diff) for diff in diffs],
                "report": report.to_dict(),
            }
        )
    else:
        print(report.to_text())
        for diff in diffs:
            print(diff)
        print(f"{checked} cells checked, {len(diffs)} mismatches")
    return len(diffs)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

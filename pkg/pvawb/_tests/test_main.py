"""Test command line utility and associated functions"""

import pathlib
from unittest.mock import patch

import pytest

from pvawb import _main
from pvawb import _settings
from pvawb import exceptions
from pvawb.graph_ir import TensorShape


def test_main():
    # build subcommand
    with patch("sys.argv", ["pvawb", "build", "pvanet", "--input", "512x320x3"]), patch(
        "pvawb._build.main"
    ) as mock_build:
        _main.main()
        mock_build.assert_called_once()
        assert mock_build.call_args[0][0] == "pvanet"
        assert mock_build.call_args[1]["input_shape"] == TensorShape(512, 320, 3)
        assert mock_build.call_args[1]["rank"] == _settings._default_rank

    # any subcommand that raises a RuntimeError
    with patch("sys.argv", ["pvawb", "build", "rpn"]), patch(
        "pvawb._build.main", side_effect=RuntimeError
    ) as mock_build, patch("sys.exit") as mock_exit:
        _main.main()
        mock_build.assert_called_once()
        mock_exit.assert_called_once_with(_settings._exit_module_error)

    # any subcommand that raises a PVAWBError
    with patch("sys.argv", ["pvawb", "shapes", "graph.json"]), patch(
        "pvawb._shapes.main", side_effect=exceptions.GraphValidationError
    ), patch("sys.exit") as mock_exit:
        _main.main()
        mock_exit.assert_called_once_with(_settings._exit_module_error)

    # input file errors have their own exit code
    with patch("sys.argv", ["pvawb", "cost", "missing.json"]), patch(
        "pvawb._cost.main", side_effect=exceptions.InputFileError
    ), patch("sys.exit") as mock_exit:
        _main.main()
        mock_exit.assert_called_once_with(_settings._exit_input_file)

    # verify mismatches
    with patch("sys.argv", ["pvawb", "verify"]), patch("pvawb._verify.main", return_value=2), patch(
        "sys.exit"
    ) as mock_exit:
        _main.main()
        mock_exit.assert_called_once_with(_settings._exit_verify_mismatch)

    with patch("sys.argv", ["pvawb", "verify", "--json"]), patch(
        "pvawb._verify.main", return_value=0
    ) as mock_verify, patch("sys.exit") as mock_exit:
        _main.main()
        mock_exit.assert_not_called()
        assert mock_verify.call_args[0][0] == _settings._structure_table_fixture
        assert mock_verify.call_args[1]["json_output"] is True

    # no subcommand prints the help
    with patch("sys.argv", ["pvawb"]), patch("argparse.ArgumentParser.print_help") as mock_help:
        _main.main()
        mock_help.assert_called_once()

    # unknown subcommand
    with patch("sys.argv", ["pvawb", "notasubcommand"]), pytest.raises(SystemExit):
        _main.main()


subcommand_args = {
    "shapes json": (["shapes", "g.json", "--json"], "_shapes", "json_output", True),
    "cost rounding": (["cost", "g.json", "--rounding", "exact"], "_cost", "rounding", "exact"),
    "cost detection": (["cost", "g.json", "--detection", "--rank", "256"], "_cost", "rank", 256),
    "rf node": (["rf", "g.json", "--node", "conv5_4"], "_rf", "node", "conv5_4"),
    "rf max paths": (["rf", "g.json", "--max-paths", "1000"], "_rf", "max_paths", 1000),
    "train variant": (["train-toy", "--variant", "mcrelu"], "_train_toy", "variant", "mcrelu"),
    "train patience": (["train-toy", "--patience", "20"], "_train_toy", "patience", 20),
    "detect proposals": (["detect-sim", "--proposals", "50"], "_detect_sim", "proposals", 50),
    "detect threshold": (["detect-sim", "--nms-threshold", "0.7"], "_detect_sim", "nms_threshold", 0.7),
    "compress layers": (["compress", "g.json", "--layers", "fc6"], "_compress", "layers", ["fc6"]),
    "compress default": (["compress", "g.json"], "_compress", "rank", 512),
}


@pytest.mark.parametrize(
    "argv, module, keyword, value",
    subcommand_args.values(),
    ids=subcommand_args.keys(),
)
def test_subcommand_arguments(argv, module, keyword, value):
    # Help/usage. Should not raise
    with patch("sys.argv", ["pvawb", argv[0], "-h"]), pytest.raises(SystemExit) as err:
        _main.main()
    assert err.value.code == 0

    with patch("sys.argv", ["pvawb"] + argv), patch(f"pvawb.{module}.main") as mock_main:
        _main.main()
        mock_main.assert_called_once()
        assert mock_main.call_args[1][keyword] == value
        if argv[1:] and not argv[1].startswith("-"):
            assert mock_main.call_args[0][0] == pathlib.Path(argv[1])


invalid_arguments = {
    "build unknown network": ["build", "vgg16"],
    "shapes bad input": ["shapes", "g.json", "--input", "640x3"],
    "rf zero max paths": ["rf", "g.json", "--max-paths", "0"],
    "train negative iterations": ["train-toy", "--iterations", "-1"],
}


@pytest.mark.parametrize(
    "argv",
    invalid_arguments.values(),
    ids=invalid_arguments.keys(),
)
def test_invalid_arguments(argv):
    with patch("sys.argv", ["pvawb"] + argv), pytest.raises(SystemExit) as err:
        _main.main()
    assert err.value.code == 2

"""Test project utilities"""

import io
import json
import argparse
from unittest.mock import patch
from contextlib import nullcontext as does_not_raise

import pytest

from pvawb import _settings
from pvawb import _utilities
from pvawb.graph_ir import TensorShape
from pvawb.exceptions import APIError, InputFileError


shape_type = {
    "table input": ("1056x640x3", TensorShape(1056, 640, 3), does_not_raise()),
    "two fields": ("1056x640", None, pytest.raises(argparse.ArgumentTypeError)),
    "zero": ("0x640x3", None, pytest.raises(argparse.ArgumentTypeError)),
    "words": ("tall", None, pytest.raises(argparse.ArgumentTypeError)),
}


@pytest.mark.parametrize(
    "text, expected, outcome",
    shape_type.values(),
    ids=shape_type.keys(),
)
def test_shape_type(text, expected, outcome):
    with outcome:
        assert _utilities.shape_type(text) == expected


integer_types = {
    "positive one": (_utilities.positive_int, "1", 1, does_not_raise()),
    "positive zero": (_utilities.positive_int, "0", None, pytest.raises(argparse.ArgumentTypeError)),
    "positive float": (_utilities.positive_int, "1.5", None, pytest.raises(argparse.ArgumentTypeError)),
    "non-negative zero": (_utilities.non_negative_int, "0", 0, does_not_raise()),
    "non-negative negative": (_utilities.non_negative_int, "-1", None, pytest.raises(argparse.ArgumentTypeError)),
}


@pytest.mark.parametrize(
    "function, text, expected, outcome",
    integer_types.values(),
    ids=integer_types.keys(),
)
def test_integer_types(function, text, expected, outcome):
    with outcome:
        assert function(text) == expected


def test_load_yaml_file(tmp_path):
    mapping = tmp_path / "config.yaml"
    mapping.write_text("batch_size: 4\nscheduler:\n  patience: 5\n")
    assert _utilities.load_yaml_file(mapping) == {"batch_size": 4, "scheduler": {"patience": 5}}

    as_json = tmp_path / "config.json"
    as_json.write_text(json.dumps({"iterations": 3}))
    assert _utilities.load_yaml_file(as_json) == {"iterations": 3}

    sequence = tmp_path / "list.yaml"
    sequence.write_text("- 1\n- 2\n")
    with pytest.raises(InputFileError):
        _utilities.load_yaml_file(sequence)

    broken = tmp_path / "broken.yaml"
    broken.write_text("key: [unclosed\n")
    with pytest.raises(InputFileError):
        _utilities.load_yaml_file(broken)

    with pytest.raises(InputFileError):
        _utilities.load_yaml_file(tmp_path / "missing.yaml")


def test_load_graph_file(pvanet_file):
    graph = _utilities.load_graph_file(pvanet_file)
    assert graph.input_shape == TensorShape(1056, 640, 3)
    graph = _utilities.load_graph_file(pvanet_file, TensorShape(528, 320, 3))
    assert graph.input_shape == TensorShape(528, 320, 3)


thread_count = {
    "unset": ({}, 1, does_not_raise()),
    "blank": ({"PVAWB_THREADS": " "}, 1, does_not_raise()),
    "four": ({"PVAWB_THREADS": "4"}, 4, does_not_raise()),
    "zero": ({"PVAWB_THREADS": "0"}, None, pytest.raises(APIError)),
    "text": ({"PVAWB_THREADS": "many"}, None, pytest.raises(APIError)),
}


@pytest.mark.parametrize(
    "environment, expected, outcome",
    thread_count.values(),
    ids=thread_count.keys(),
)
def test_thread_count(environment, expected, outcome):
    assert _settings._threads_environment_variable == "PVAWB_THREADS"
    with outcome:
        assert _utilities.thread_count(environment) == expected


def test_thread_count_reads_os_environment():
    with patch.dict("os.environ", {"PVAWB_THREADS": "3"}):
        assert _utilities.thread_count() == 3


def test_write_json():
    stream = io.StringIO()
    _utilities.write_json({"a": [1, 2]}, stream)
    assert stream.getvalue().endswith("\n")
    assert json.loads(stream.getvalue()) == {"a": [1, 2]}


def test_write_text(tmp_path, capsys):
    _utilities.write_text("to stdout")
    assert capsys.readouterr().out == "to stdout\n"
    output_file = tmp_path / "out.txt"
    _utilities.write_text("to file\n", output_file)
    assert output_file.read_text() == "to file\n"

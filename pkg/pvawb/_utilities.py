"""Internal API module storing project utilities.

Functions that may be used in a CLI implementation should raise ``RuntimeError`` or a derived class of
:class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert stack-trace/exceptions into STDERR
message and non-zero exit codes.
"""

import os
import sys
import json
import typing
import pathlib
import argparse

import yaml

from pvawb import _settings
from pvawb.graph_ir import NetworkGraph, TensorShape, load_graph
from pvawb.exceptions import APIError, InputFileError


_exclude_from_namespace = set(globals().keys())


def shape_type(text: str) -> TensorShape:
    """Argparse type for ``HxWxC`` shape options

    :param text: shape text, e.g. ``1056x640x3``

    :returns: parsed shape

    :raises argparse.ArgumentTypeError: If the text is not three positive integers
    """
    try:
        return TensorShape.from_text(text)
    except Exception as err:
        raise argparse.ArgumentTypeError(f"invalid HxWxC shape '{text}': {err}")


def positive_int(text: str) -> int:
    """Argparse type for strictly positive integers"""
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid positive integer '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"invalid positive integer '{text}'")
    return value


def non_negative_int(text: str) -> int:
    """Argparse type for integers greater than or equal to zero"""
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid non-negative integer '{text}'")
    if value < 0:
        raise argparse.ArgumentTypeError(f"invalid non-negative integer '{text}'")
    return value


def load_graph_file(
    path: typing.Union[str, pathlib.Path], input_shape: typing.Optional[TensorShape] = None
) -> NetworkGraph:
    """Read a graph description file, optionally overriding its input shape

    :param path: JSON graph description file
    :param input_shape: input shape replacing the file's ``input`` field

    :returns: graph

    :raises InputFileError: If the file is missing or malformed
    """
    graph = load_graph(path)
    if input_shape is not None:
        graph = graph.replace(input_shape=input_shape)
    return graph


def load_yaml_file(path: typing.Union[str, pathlib.Path]) -> typing.Dict[str, typing.Any]:
    """Read a YAML or JSON mapping

    :param path: file to read

    :returns: file contents

    :raises InputFileError: If the file is missing, does not parse, or is not a mapping
    """
    path = pathlib.Path(path)
    if not path.is_file():
        raise InputFileError(f"'{path}' does not exist or is not a file")
    with open(path, "r") as input_file:
        try:
            content = yaml.safe_load(input_file)
        except yaml.YAMLError as err:
            raise InputFileError(f"'{path}' does not parse as YAML or JSON: {err}")
    if not isinstance(content, dict):
        raise InputFileError(f"'{path}' must hold a mapping at the top level")
    return content


def thread_count(environment: typing.Optional[typing.Mapping[str, str]] = None) -> int:
    """Return the internal thread cap from ``PVAWB_THREADS``

    :param environment: environment mapping, defaults to ``os.environ``

    :returns: thread cap, one when the variable is unset

    :raises APIError: If the variable is not a positive integer
    """
    environment = os.environ if environment is None else environment
    text = environment.get(_settings._threads_environment_variable)
    if text is None or text.strip() == "":
        return _settings._default_threads
    try:
        threads = int(text)
    except ValueError:
        threads = 0
    if threads < 1:
        raise APIError(f"{_settings._threads_environment_variable} must be a positive integer, got '{text}'")
    return threads


def write_json(data: typing.Any, stream: typing.Optional[typing.TextIO] = None) -> None:
    """Write one JSON document followed by a newline, to STDOUT by default"""
    stream = sys.stdout if stream is None else stream
    stream.write(json.dumps(data, indent=2) + "\n")


def write_text(text: str, output_file: typing.Optional[pathlib.Path] = None) -> None:
    """Write text to a file, or to STDOUT when no file is given"""
    if output_file is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        output_file.write_text(text if text.endswith("\n") else text + "\n")


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

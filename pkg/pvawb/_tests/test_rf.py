"""Test the rf subcommand"""

import json

import pytest

from pvawb import _rf
from pvawb import net_builders
from pvawb.graph_ir import save_graph
from pvawb.exceptions import APIError, PathExplosionError


@pytest.fixture
def inception_file(tmp_path):
    path = tmp_path / "inception_chain.json"
    save_graph(net_builders.build_inception_chain(), path)
    return path


def test_main_summary(inception_file, capsys):
    _rf.main(inception_file)
    assert capsys.readouterr().out == "inception3: 27 paths, rf min 1, max 13, mean 7.00\n"


def test_main_histogram(inception_file, capsys):
    _rf.main(inception_file, node="inception1", histogram=True)
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "inception1: 3 paths, rf min 1, max 5, mean 3.00"
    assert len(lines) == 4


def test_main_json_with_measurement(inception_file, capsys):
    _rf.main(inception_file, node="inception2", json_output=True, empirical=True)
    data = json.loads(capsys.readouterr().out)
    assert data["total_paths"] == 9
    assert data["empirical"] == 9


def test_main_errors(inception_file):
    with pytest.raises(APIError):
        _rf.main(inception_file, node="conv6")
    with pytest.raises(PathExplosionError):
        _rf.main(inception_file, max_paths=10)


def test_main_plot(inception_file, tmp_path):
    output_file = tmp_path / "plots" / "rf.png"
    _rf.main(inception_file, plot=output_file)
    assert output_file.is_file()

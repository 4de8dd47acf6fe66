import pathlib

import numpy
import pytest

from pvawb import net_builders
from pvawb.graph_ir import save_graph


def pytest_addoption(parser):
    parser.addoption(
        "--system-test-dir",
        action="store",
        type=pathlib.Path,
        default=None,
        help="system test build directory root",
    )


@pytest.fixture
def system_test_directory(request):
    return request.config.getoption("--system-test-dir")


@pytest.fixture(scope="session")
def pvanet_graph():
    return net_builders.build_pvanet_feature_extractor()


@pytest.fixture
def pvanet_file(pvanet_graph, tmp_path):
    path = tmp_path / "pvanet.json"
    save_graph(pvanet_graph, path)
    return path


@pytest.fixture
def rng():
    return numpy.random.default_rng(20160923)

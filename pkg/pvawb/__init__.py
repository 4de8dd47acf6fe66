"""PVANet workbench

Layer-graph intermediate representation, analytical cost model, receptive-field analysis, a desk-scale tensor engine,
plateau learning-rate training, detection post-processing, and low-rank fully-connected compression for the PVANet
detection architecture.

BSD 3-Clause License. See ``LICENSE.txt`` in the source repository.
"""

import warnings
from importlib.metadata import version, PackageNotFoundError

from pvawb import graph_ir
from pvawb import net_builders
from pvawb import cost_model
from pvawb import receptive_field
from pvawb import tensor_engine
from pvawb import trainer
from pvawb import detection_post
from pvawb import low_rank


try:
    __version__ = version("pvawb")
except PackageNotFoundError:
    try:
        from pvawb import _version  # type: ignore[attr-defined]

        __version__ = _version.version
    except ImportError:
        # Should only hit this when running as an un-installed package in the local repository
        import pathlib

        warnings.filterwarnings(action="ignore", message="tag", category=UserWarning, module="setuptools_scm")
        try:
            import setuptools_scm

            __version__ = setuptools_scm.get_version(
                root=pathlib.Path(__file__).parent.parent, fallback_version="0.1.0"
            )
            del setuptools_scm
        except (ImportError, LookupError):
            __version__ = "0.1.0"
        # Remove third-party packages from the project namespace
        del pathlib

# Remove third-party packages from the project namespace
del warnings, version, PackageNotFoundError

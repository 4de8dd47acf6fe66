"""Internal API module storing the matplotlib figures shared by the ``rf`` and ``train-toy`` subcommands.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import sys
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot  # noqa: E402
import pandas  # noqa: E402

from pvawb import receptive_field  # noqa: E402


_exclude_from_namespace = set(globals().keys())


def history_figure(history: pandas.DataFrame) -> matplotlib.figure.Figure:
    """Loss curves on a log learning rate twin axis

    :param history: training or replay history
    """
    figure, axes = matplotlib.pyplot.subplots()
    axes.plot(history["iteration"], history["loss"], label="loss", alpha=0.4)
    axes.plot(history["iteration"], history["smoothed_loss"], label="smoothed loss")
    axes.set_xlabel("iteration")
    axes.set_ylabel("loss")
    rate_axes = axes.twinx()
    rate_axes.step(history["iteration"], history["lr"], where="post", color="black", label="learning rate")
    rate_axes.set_yscale("log")
    rate_axes.set_ylabel("learning rate")
    for iteration in history.loc[history["decayed"], "iteration"]:
        axes.axvline(iteration, color="gray", linestyle=":", linewidth=0.8)
    axes.legend(loc="upper right")
    return figure


def rf_figure(distribution: "receptive_field.RfDistribution") -> matplotlib.figure.Figure:
    """Bar chart of path counts per receptive field size"""
    figure, axes = matplotlib.pyplot.subplots()
    sizes = [rf for rf, _ in distribution.entries]
    counts = [count for _, count in distribution.entries]
    axes.bar(sizes, counts)
    axes.set_xlabel("receptive field (pixels)")
    axes.set_ylabel("paths")
    axes.set_title(f"{distribution.node}: {distribution.total_paths} paths, mean {distribution.mean:.1f}")
    return figure


def plot(
    figure: matplotlib.figure.Figure,
    output_file: pathlib.Path,
    transparent: bool = False,
) -> pathlib.Path:
    """Save a figure, falling back to svg for extensions matplotlib does not support

    :param figure: The matplotlib figure
    :param output_file: File for saving the figure
    :param transparent: Use a transparent background

    :returns: written file
    """
    file_name = output_file
    file_name.parent.mkdir(parents=True, exist_ok=True)
    suffix = output_file.suffix
    if not suffix or suffix[1:] not in list(figure.canvas.get_supported_filetypes().keys()):
        # If there is no suffix or it's not supported by matplotlib, use svg
        file_name = file_name.with_suffix(".svg")
        print(
            f"WARNING: extension '{suffix}' is not supported by matplotlib. Falling back to '{file_name}'",
            file=sys.stderr,
        )
    figure.savefig(str(file_name), transparent=transparent)
    matplotlib.pyplot.close(figure)
    return file_name


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""Internal API module implementing the ``train-toy`` subcommand behavior.

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation
to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import typing
import pathlib
import argparse

from pvawb import _settings
from pvawb import _utilities
from pvawb import trainer
from pvawb import net_builders


_exclude_from_namespace = set(globals().keys())


def get_parser() -> argparse.ArgumentParser:
    """Return a 'no-help' parser for the train-toy subcommand

    :return: parser
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--variant",
        choices=_settings._allowable_toy_variants,
        default=_settings._allowable_toy_variants[0],
        help="Activation of the toy network (default: %(default)s)",
    )
    parser.add_argument(
        "--config",
        type=pathlib.Path,
        default=None,
        # fmt: off
        help="YAML or JSON training configuration with optional ``scheduler`` mapping. Options given on the "
             "command line take precedence (default: %(default)s)",
        # fmt: on
    )
    parser.add_argument(
        "--seed",
        type=_utilities.non_negative_int,
        default=None,
        help=f"Dataset, initialization and shuffling seed, {_settings._default_seed} when unset anywhere",
    )
    parser.add_argument("--iterations", type=_utilities.non_negative_int, default=None, help="Step limit")
    parser.add_argument("--batch-size", type=_utilities.positive_int, default=None, help="Samples per step")
    parser.add_argument(
        "--samples",
        type=_utilities.positive_int,
        default=_settings._default_toy_samples,
        help="Toy dataset size (default: %(default)s)",
    )
    parser.add_argument(
        "--base-lr",
        type=float,
        default=None,
        help=f"Initial learning rate, {_settings._toy_base_lr} when unset anywhere",
    )
    parser.add_argument(
        "--patience",
        type=_utilities.positive_int,
        default=None,
        help=f"Plateau patience in steps, {_settings._toy_patience} when unset anywhere",
    )
    parser.add_argument(
        "--window",
        type=_utilities.positive_int,
        default=None,
        help=f"Loss smoothing window, {_settings._toy_window} when unset anywhere",
    )
    parser.add_argument(
        "--history",
        type=pathlib.Path,
        default=None,
        help="Write the per-step history CSV to this file (default: %(default)s)",
    )
    parser.add_argument(
        "--plot",
        type=pathlib.Path,
        default=None,
        help="Save the loss and learning rate curves to this file (default: %(default)s)",
    )
    parser.add_argument(
        "--output-weights",
        type=pathlib.Path,
        default=None,
        help="Write the trained weights in the engine's binary format (default: %(default)s)",
    )
    parser.add_argument(
        "--json",
        action="store_true",
        help="Print a JSON summary (default: %(default)s)",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Print training progress (default: %(default)s)",
    )
    return parser


def resolve_config(
    config_file: typing.Optional[pathlib.Path] = None,
    overrides: typing.Optional[typing.Mapping[str, typing.Any]] = None,
    scheduler_overrides: typing.Optional[typing.Mapping[str, typing.Any]] = None,
) -> trainer.TrainConfig:
    """Merge a configuration file with command line values

    ``None`` valued overrides are ignored.

    :param config_file: YAML or JSON mapping of :class:`pvawb.trainer.TrainConfig` keys
    :param overrides: training keys
    :param scheduler_overrides: scheduler keys

    :returns: training configuration

    :raises InputFileError: If the configuration file is missing or malformed
    :raises InvalidSpecError: If a key is unknown or a value is out of range
    """
    data = dict(_utilities.load_yaml_file(config_file)) if config_file is not None else {}
    scheduler = dict(data.pop("scheduler", None) or {})
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    scheduler.update({key: value for key, value in (scheduler_overrides or {}).items() if value is not None})
    scheduler.setdefault("base_lr", _settings._toy_base_lr)
    scheduler.setdefault("patience", _settings._toy_patience)
    scheduler.setdefault("window", _settings._toy_window)
    data["scheduler"] = scheduler
    return trainer.TrainConfig.from_dict(data)


def main(
    variant: str = _settings._allowable_toy_variants[0],
    config_file: typing.Optional[pathlib.Path] = None,
    seed: typing.Optional[int] = None,
    iterations: typing.Optional[int] = None,
    batch_size: typing.Optional[int] = None,
    samples: int = _settings._default_toy_samples,
    base_lr: typing.Optional[float] = None,
    patience: typing.Optional[int] = None,
    window: typing.Optional[int] = None,
    history_file: typing.Optional[pathlib.Path] = None,
    plot: typing.Optional[pathlib.Path] = None,
    output_weights: typing.Optional[pathlib.Path] = None,
    json_output: bool = False,
    verbose: bool = False,
) -> None:
    """Train the toy C.ReLU network on the two-class toy dataset

    :param variant: ``crelu`` or ``mcrelu``
    :param config_file: training configuration file
    :param seed: seed override
    :param iterations: step limit override
    :param batch_size: batch size override
    :param samples: toy dataset size
    :param base_lr: initial learning rate override
    :param patience: plateau patience override
    :param window: smoothing window override
    :param history_file: history CSV destination
    :param plot: loss curve figure destination
    :param output_weights: trained weight store destination
    :param json_output: print JSON instead of text
    :param verbose: print progress while training

    :raises NonFiniteLossError: If training diverges
    """
    config = resolve_config(
        config_file,
        {"seed": seed, "iterations": iterations, "batch_size": batch_size, "verbose": verbose or None},
        {"base_lr": base_lr, "patience": patience, "window": window},
    )
    graph = net_builders.build_toy_crelu_net(variant)
    dataset = trainer.make_toy_dataset(samples=samples, size=graph.input_shape.height, seed=config.seed)
    result = trainer.train(graph, dataset, config)
    history = result.history
    summary = {
        "variant": variant,
        "steps": len(history),
        "final_loss": float(history["loss"].iloc[-1]) if len(history) else None,
        "final_smoothed_loss": float(history["smoothed_loss"].iloc[-1]) if len(history) else None,
        "final_lr": result.scheduler.lr,
        "decays": int(history["decayed"].sum()),
        "terminated": result.scheduler.terminate,
        "accuracy": trainer.accuracy(graph, result.weights, *dataset),
    }
    if history_file is not None:
        trainer.save_history(history, history_file)
    if output_weights is not None:
        result.weights.save(output_weights)
    if plot is not None:
        from pvawb import _visualize

        _visualize.plot(_visualize.history_figure(history), plot)
    if json_output:
        _utilities.write_json(summary)
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

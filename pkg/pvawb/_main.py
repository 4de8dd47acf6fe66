"""Internal module implementing the command line utility behavior

Should raise ``RuntimeError`` or a derived class of :class:`pvawb.exceptions.PVAWBError` to allow
:meth:`pvawb._main.main` to convert stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import sys
import argparse

from pvawb import _settings
from pvawb import __version__
from pvawb import _build
from pvawb import _verify
from pvawb import _shapes
from pvawb import _cost
from pvawb import _rf
from pvawb import _train_toy
from pvawb import _detect_sim
from pvawb import _compress
from pvawb.exceptions import InputFileError, PVAWBError


_exclude_from_namespace = set(globals().keys())


def main() -> None:
    """This is the main function that performs actions based on command line arguments."""
    parser = get_parser()
    args = parser.parse_args()

    try:
        if args.subcommand == "build":
            _build.main(args.NETWORK, output_file=args.output_file, input_shape=args.input, rank=args.rank)
        elif args.subcommand == "verify":
            mismatches = _verify.main(args.fixture, rounding=args.rounding, json_output=args.json)
            if mismatches:
                sys.exit(_settings._exit_verify_mismatch)
        elif args.subcommand == "shapes":
            _shapes.main(args.GRAPH_FILE, input_shape=args.input, json_output=args.json)
        elif args.subcommand == "cost":
            _cost.main(
                args.GRAPH_FILE,
                input_shape=args.input,
                rounding=args.rounding,
                json_output=args.json,
                detection=args.detection,
                proposals=args.proposals,
                rank=args.rank,
            )
        elif args.subcommand == "rf":
            _rf.main(
                args.GRAPH_FILE,
                node=args.node,
                max_paths=args.max_paths,
                json_output=args.json,
                histogram=args.histogram,
                empirical=args.empirical,
                input_shape=args.input,
                plot=args.plot,
            )
        elif args.subcommand == "train-toy":
            _train_toy.main(
                variant=args.variant,
                config_file=args.config,
                seed=args.seed,
                iterations=args.iterations,
                batch_size=args.batch_size,
                samples=args.samples,
                base_lr=args.base_lr,
                patience=args.patience,
                window=args.window,
                history_file=args.history,
                plot=args.plot,
                output_weights=args.output_weights,
                json_output=args.json,
                verbose=args.verbose,
            )
        elif args.subcommand == "detect-sim":
            _detect_sim.main(
                scene_file=args.scene,
                maps_file=args.maps,
                save_maps=args.save_maps,
                seed=args.seed,
                proposals=args.proposals,
                pre_nms=args.pre_nms,
                nms_threshold=args.nms_threshold,
                min_size=args.min_size,
            )
        elif args.subcommand == "compress":
            _compress.main(
                args.GRAPH_FILE,
                rank=args.rank,
                layers=args.layers,
                weights_file=args.weights,
                output_weights=args.output_weights,
                output_file=args.output_file,
                json_output=args.json,
            )
        else:
            parser.print_help()
    except InputFileError as err:
        print(str(err), file=sys.stderr)
        sys.exit(_settings._exit_input_file)
    except (PVAWBError, RuntimeError) as err:
        print(str(err), file=sys.stderr)
        sys.exit(_settings._exit_module_error)


def get_parser() -> argparse.ArgumentParser:
    """Get parser object for command line options

    :return: parser
    """
    main_description = (
        "Builds, costs and analyzes PVANet style detection networks: structure table verification, receptive field "
        "distributions, toy C.ReLU training, synthetic proposal post-processing and fully-connected compression."
    )
    main_parser = argparse.ArgumentParser(
        description=main_description,
        prog=_settings._project_name_short.lower(),
    )

    main_parser.add_argument(
        "-V",
        "--version",
        action="version",
        version=f"{_settings._project_name_short.upper()} {__version__}",
    )

    subparsers = main_parser.add_subparsers(
        # So args.subcommand will contain the name of the subcommand called
        title="subcommands",
        metavar="{subcommand}",
        dest="subcommand",
    )

    subparsers.add_parser(
        "build",
        help="Write a built network as a graph description file",
        description="Write one of the packaged network builders as a JSON graph description file",
        parents=[_build.get_parser()],
    )

    subparsers.add_parser(
        "verify",
        help="Reproduce the PVANet structure table and GMAC breakdown",
        # fmt: off
        description="Build PVANet, cost it at the fixture input and diff every table rounded cell against the "
                    "fixture. Exits with status 1 on any mismatch.",
        # fmt: on
        parents=[_verify.get_parser()],
    )

    subparsers.add_parser(
        "shapes",
        help="Validate a graph and print every node's output shape",
        parents=[_shapes.get_parser()],
    )

    subparsers.add_parser(
        "cost",
        help="Print parameter and MAC counts of a graph",
        # fmt: off
        description="Print per structure table row parameter and multiply-accumulate counts of a graph, optionally "
                    "with the detection GMAC breakdown",
        # fmt: on
        parents=[_cost.get_parser()],
    )

    subparsers.add_parser(
        "rf",
        help="Print the receptive field distribution of a node",
        # fmt: off
        description="Count every input-to-node path of a graph by receptive field size and print the distribution "
                    "summary, histogram or JSON",
        # fmt: on
        parents=[_rf.get_parser()],
    )

    subparsers.add_parser(
        "train-toy",
        help="Train the toy C.ReLU network with the plateau learning rate policy",
        parents=[_train_toy.get_parser()],
    )

    subparsers.add_parser(
        "detect-sim",
        help="Print RPN proposals of a synthetic scene as JSON lines",
        # fmt: off
        description="Simulate RPN score and delta maps for planted objects, or read stored maps, and print the "
                    "proposals surviving decoding, clipping and non-maximum suppression as JSON lines",
        # fmt: on
        parents=[_detect_sim.get_parser()],
    )

    subparsers.add_parser(
        "compress",
        help="Factorize fully-connected layers with truncated SVD",
        parents=[_compress.get_parser()],
    )

    return main_parser


if __name__ == "__main__":
    main()  # pragma: no cover


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]

"""
Command-line argument parsing.

Usage errors raise BadFlagError (exit code 5) instead of argparse's own exit.
"""

import argparse
from typing import List, Optional

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_OVERWRITE = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_BAD_FLAG = 5


class BadFlagError(ValueError):
    """Raised for unknown flags, missing arguments and invalid flag values."""


class CommandParser(argparse.ArgumentParser):
    def error(self, message):
        raise BadFlagError(message)


def _common_options() -> argparse.ArgumentParser:
    common = CommandParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (sectioned key = value text)")
    common.add_argument("--seed", type=int, help="Override the run seed")
    common.add_argument("--force", action="store_true", help="Replace an existing output directory")
    common.add_argument("--out", help="Output location (defaults under [run] output_dir)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Log debug messages to the console")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Only log warnings and errors")
    return common


def build_parser() -> argparse.ArgumentParser:
    """Create the wake-forecast argument parser."""
    common = _common_options()
    parser = CommandParser(
        prog="wake-forecast",
        description="Cylinder-wake simulation and ConvLSTM flow-field forecasting."
    )
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    commands.add_parser("simulate", parents=[common],
                        help="Run the flow solver and write snapshots, forces and the Strouhal number")

    dataset = commands.add_parser("dataset", parents=[common], help="Build the windowed dataset from snapshots")
    dataset.add_argument("--source", action="append", help="Snapshot directory (repeatable; overrides the config)")

    train = commands.add_parser("train", parents=[common], help="Train a forecasting model")
    train.add_argument("--dataset", help="Dataset directory")
    train.add_argument("--variant", choices=("standard", "improved"), help="Model variant")

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint on the test split")
    evaluate.add_argument("--dataset", help="Dataset directory")
    evaluate.add_argument("--checkpoint", help="Checkpoint directory")
    evaluate.add_argument("--variant", choices=("standard", "improved"), help="Model variant")
    evaluate.add_argument("--horizon", type=int, default=10, help="Rollout lead times to evaluate (default 10)")

    compare = commands.add_parser("compare", parents=[common], help="Train both variants and tabulate the comparison")
    compare.add_argument("--dataset", help="Dataset directory")

    render = commands.add_parser("render", parents=[common], help="Render fields as PGM/PPM images")
    render.add_argument("input", help="VTEN tensor file or snapshot directory")
    render.add_argument("--field", default="v", help="u, v, p or mag (default v)")
    render.add_argument("--frame", type=int, help="Frame index (default: last snapshot / every tensor frame)")
    render.add_argument("--channel-names", default="u,v", help="Channel names of a tensor file (default u,v)")
    render.add_argument("--truth", help="Ground-truth tensor; renders truth/prediction/error triptychs")
    render.add_argument("--color", action="store_true", help="Also write blue-white-red PPM images")

    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)

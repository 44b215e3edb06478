"""
Command-line entry point.

    wake-forecast simulate|dataset|train|eval|compare|render [options]

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 output exists without --force, 4 missing input artifact, 5 invalid flag.
Errors found before logging starts are printed to stderr.
"""

import sys
import logging
from typing import List, Optional

from ..core import check_dependencies
from ..core.dataset import DatasetError
from ..core.file_handler import ArtifactError
from ..core.solver import PoissonConvergenceError, SimulationDivergedError
from ..core.tensor import ShapeError
from ..core.training import ComparisonError, TrainingError
from ..utils.logger import log_run_context, set_log_level, setup_exception_logging, setup_logging
from ..utils.validators import is_valid_seed
from . import commands
from .config import ConfigError, load_run_config
from .parser import (EXIT_BAD_FLAG, EXIT_CONFIG, EXIT_MISSING_ARTIFACT, EXIT_OK, EXIT_OVERWRITE, EXIT_RUNTIME,
                     BadFlagError, parse_args)

# Get the package logger
logger = logging.getLogger(__name__)

COMMANDS = {
    "simulate": commands.cmd_simulate,
    "dataset": commands.cmd_dataset,
    "train": commands.cmd_train,
    "eval": commands.cmd_eval,
    "compare": commands.cmd_compare,
    "render": commands.cmd_render,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (sys.argv[1:] by default)

    Returns:
        Process exit code
    """
    try:
        args = parse_args(argv)
    except BadFlagError as e:
        print(f"wake-forecast: error: {e}", file=sys.stderr)
        return EXIT_BAD_FLAG
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    if not is_valid_seed(args.seed):
        print(f"wake-forecast: error: --seed must be a non-negative 64-bit integer, got {args.seed}",
              file=sys.stderr)
        return EXIT_BAD_FLAG

    try:
        cfg = load_run_config(args.config)
    except FileNotFoundError as e:
        print(f"wake-forecast: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"wake-forecast: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(cfg.log_dir)
    setup_exception_logging()
    if not check_dependencies()[0]:
        logger.warning("Install missing packages with: pip install -r requirements.txt")
    if args.verbose:
        set_log_level(logging.DEBUG)
    elif args.quiet:
        set_log_level(logging.WARNING)
    log_run_context(args.command, cfg.config_hash, cfg.seed if args.seed is None else args.seed)

    try:
        return COMMANDS[args.command](args, cfg)
    except BadFlagError as e:
        logger.error(str(e))
        return EXIT_BAD_FLAG
    except (ConfigError, ComparisonError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except FileExistsError as e:
        logger.error(str(e))
        return EXIT_OVERWRITE
    except (ArtifactError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_MISSING_ARTIFACT
    except (PoissonConvergenceError, SimulationDivergedError, TrainingError) as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    except (DatasetError, ShapeError, KeyError, ValueError, OSError) as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME


__all__ = ["main", "COMMANDS", "EXIT_OK"]

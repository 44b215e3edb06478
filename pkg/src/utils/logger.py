"""
Logger Module

Logging for command-line runs: a console handler on stderr plus a rotating
log file in the run's log directory. Library modules only create loggers
with logging.getLogger(__name__); handlers are installed by the CLI through
setup_logging().
"""

import os
import sys
import time
import logging
import logging.handlers
import tempfile
import functools
from typing import Optional, Union

from . import get_system_info
from .formatters import format_duration

DEFAULT_CONSOLE_LEVEL = logging.INFO
DEFAULT_FILE_LEVEL = logging.DEBUG

DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DEFAULT_CONSOLE_FORMAT = "%(levelname)s: %(message)s"

APP_NAME = "wake_forecast"
LOG_FILE_NAME = f"{APP_NAME}.log"

logger = logging.getLogger(__name__)

_log_file_path: Optional[str] = None


def default_log_dir() -> str:
    """Log directory used when the run config sets no [run] log_dir."""
    return os.path.join(tempfile.gettempdir(), APP_NAME, "logs")


def setup_logging(
    log_dir: Optional[str] = None,
    console_level: int = DEFAULT_CONSOLE_LEVEL,
    file_level: int = DEFAULT_FILE_LEVEL,
    max_file_size: int = 5 * 1024 * 1024,
    backup_count: int = 3,
) -> logging.Logger:
    """
    Install the console and log-file handlers on the root logger.

    Handlers from an earlier call are closed first, so repeated runs in one
    process do not duplicate output. If the log directory cannot be created
    the run continues with console logging only.

    Args:
        log_dir: Directory of wake_forecast.log (default: default_log_dir())
        console_level: Level of the stderr handler
        file_level: Level of the file handler
        max_file_size: Size in bytes at which the log file rotates
        backup_count: Rotated files kept next to the active one

    Returns:
        Root logger instance
    """
    global _log_file_path

    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        handler.close()
    root_logger.setLevel(logging.DEBUG)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter(DEFAULT_CONSOLE_FORMAT))
    root_logger.addHandler(console_handler)

    log_dir = log_dir or default_log_dir()
    log_file = os.path.join(log_dir, LOG_FILE_NAME)
    _log_file_path = None
    try:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=max_file_size, backupCount=backup_count, encoding='utf-8')
        file_handler.setLevel(file_level)
        file_handler.setFormatter(logging.Formatter(DEFAULT_LOG_FORMAT))
        root_logger.addHandler(file_handler)
        _log_file_path = log_file
    except OSError as e:
        logger.warning(f"Logging to console only; cannot open {log_file}: {e}")

    logging.captureWarnings(True)
    _log_system_info()
    return root_logger


def setup_exception_logging(exit_on_exception: bool = False) -> None:
    """
    Route uncaught exceptions (other than Ctrl-C) to the log at CRITICAL level.

    Args:
        exit_on_exception: Exit with status 1 after logging
    """
    def exception_handler(exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        logger.critical("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))
        if exit_on_exception:
            sys.exit(1)

    sys.excepthook = exception_handler


def set_log_level(level: Union[int, str], logger_name: Optional[str] = None) -> None:
    """
    Change the console verbosity (--verbose / --quiet).

    The log file keeps recording at its own level.

    Args:
        level: Level number or name such as "debug"
        logger_name: Set this logger's level instead of the console handlers
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)

    if logger_name:
        logging.getLogger(logger_name).setLevel(level)
        return
    for handler in logging.getLogger().handlers:
        if not isinstance(handler, logging.FileHandler):
            handler.setLevel(level)


def get_log_file_path() -> Optional[str]:
    """Path of the active log file, if any."""
    return _log_file_path


def log_run_context(command: str, config_hash: str, seed: int) -> None:
    """Record which command ran with which configuration, so a log can be matched to its artifacts."""
    logger.info(f"wake-forecast {command} (config hash {config_hash[:12]}, seed {seed})")
    if _log_file_path:
        logger.debug(f"Log file: {_log_file_path}")


def _log_system_info() -> None:
    info = get_system_info()
    logger.debug(f"Platform: {info['platform']}, {info['cpu_count']} CPUs")
    logger.debug(f"Python {info['python_version']} ({info['python_implementation']}), "
                 f"numpy {info['numpy_version']}")


def log_execution_time(logger_name: Optional[str] = None, level: int = logging.INFO):
    """
    Decorator that logs how long a command or pipeline stage took.

    Args:
        logger_name: Logger to report to (defaults to the function's module)
        level: Level of the timing message

    Returns:
        Decorator function
    """
    def decorator(func):
        log = logging.getLogger(logger_name or func.__module__)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception:
                log.log(level, f"{func.__name__} stopped after {format_duration(time.perf_counter() - start)}")
                raise
            log.log(level, f"{func.__name__} finished in {format_duration(time.perf_counter() - start)}")
            return result

        return wrapper

    return decorator

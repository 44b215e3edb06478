"""
Validators Module

This module provides validation functions for command-line inputs, config
files and artifacts used by the wake-forecast engine.
"""

import os
import logging
from typing import Optional, Sequence, Tuple

# Get the package logger
logger = logging.getLogger(__name__)

RENDER_FIELDS = ('u', 'v', 'p', 'mag')
CHANNEL_NAMES = ('u', 'v', 'p')
VTEN_MAGIC = b"VTEN"


def is_valid_file(file_path: str) -> bool:
    """
    Check if a path is an existing file.

    Args:
        file_path: File path to check

    Returns:
        True if the path is a file, False otherwise
    """
    if not file_path:
        return False
    try:
        return os.path.isfile(file_path)
    except (OSError, TypeError) as e:
        logger.debug(f"Error checking file: {e}")
        return False


def is_valid_directory(directory: str) -> bool:
    """
    Check if a path is an existing directory.

    Args:
        directory: Directory path to check

    Returns:
        True if the path is a directory, False otherwise
    """
    if not directory:
        return False
    try:
        return os.path.isdir(directory)
    except (OSError, TypeError) as e:
        logger.debug(f"Error checking directory: {e}")
        return False


def is_writable_directory(directory: str) -> bool:
    """
    Check if a directory is writable.

    Args:
        directory: Directory path to check

    Returns:
        True if the directory is writable, False otherwise
    """
    if not is_valid_directory(directory):
        return False
    try:
        temp_file = os.path.join(directory, f".write_test_{os.getpid()}")
        with open(temp_file, 'w') as f:
            f.write('test')
        os.remove(temp_file)
        return True
    except OSError as e:
        logger.debug(f"Directory is not writable: {directory}, error: {e}")
        return False


def validate_output_directory(directory: str, force: bool = False) -> Tuple[bool, str]:
    """
    Check that a run may write into an output directory.

    A missing or empty directory is fine; a non-empty one needs ``force``.

    Args:
        directory: Directory to validate
        force: Whether existing contents may be replaced

    Returns:
        Tuple of (is_valid, error_message)
    """
    if os.path.exists(directory):
        if not os.path.isdir(directory):
            return False, f"Not a directory: {directory}"
        if os.listdir(directory) and not force:
            return False, f"Output directory already exists: {directory} (use --force)"
    parent = os.path.dirname(os.path.abspath(directory))
    if os.path.isdir(parent) and not is_writable_directory(parent):
        return False, f"Directory is not writable: {parent}"
    return True, ""


def is_valid_tensor_file(file_path: str) -> bool:
    """Check that a file exists and starts with the VTEN magic."""
    if not is_valid_file(file_path):
        return False
    try:
        with open(file_path, 'rb') as f:
            return f.read(len(VTEN_MAGIC)) == VTEN_MAGIC
    except OSError as e:
        logger.debug(f"Could not read tensor file {file_path}: {e}")
        return False


def is_valid_render_field(name: str) -> bool:
    return name in RENDER_FIELDS


def validate_channel_names(names: Sequence[str], allowed: Sequence[str] = CHANNEL_NAMES) -> Tuple[bool, str]:
    """
    Validate an ordered channel list.

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not names:
        return False, "At least one channel is required"
    if len(set(names)) != len(names):
        return False, f"Repeated channel in {', '.join(names)}"
    unknown = [name for name in names if name not in allowed]
    if unknown:
        return False, f"Unknown channel(s) {', '.join(unknown)} (expected {', '.join(allowed)})"
    return True, ""


def is_valid_seed(seed: Optional[int]) -> bool:
    """Seeds are unsigned 64-bit integers."""
    return seed is None or (isinstance(seed, int) and 0 <= seed < 2 ** 64)


def is_valid_positive_int(value: Optional[int]) -> bool:
    return isinstance(value, int) and value >= 1

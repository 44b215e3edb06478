"""
Converters Module

This module provides utility functions for converting configuration and
manifest text into typed values.
"""

import logging
from typing import Any, List, Tuple

# Get the package logger
logger = logging.getLogger(__name__)

TRUE_VALUES = {'true', 'yes', 'on', '1'}
FALSE_VALUES = {'false', 'no', 'off', '0'}
NONE_VALUES = {'', 'none', 'auto'}


def convert_bool(text: str) -> bool:
    """
    Convert a boolean word.

    Raises:
        ValueError: If the text is not a recognised boolean
    """
    lowered = text.strip().lower()
    if lowered in TRUE_VALUES:
        return True
    if lowered in FALSE_VALUES:
        return False
    raise ValueError(f"Not a boolean: {text!r}")

def split_list(text: str, separator: str = ',') -> List[str]:
    """Split a separated list, dropping empty items."""
    return [item.strip() for item in text.split(separator) if item.strip()]

def convert_int_list(text: str) -> List[int]:
    return [int(item) for item in split_list(text)]

def convert_float_list(text: str) -> List[float]:
    return [float(item) for item in split_list(text)]

def parse_cylinders(text: str) -> List[Tuple[float, float, float]]:
    """
    Parse a cylinder list written as "x:y:d; x:y:d".

    Args:
        text: Cylinder list text

    Returns:
        List of (center_x, center_y, diameter)

    Raises:
        ValueError: If an entry does not have three numeric parts
    """
    cylinders = []
    for entry in split_list(text, ';'):
        parts = entry.split(':')
        if len(parts) != 3:
            raise ValueError(f"Cylinder entry must be 'x:y:d', got {entry!r}")
        cylinders.append(tuple(float(part) for part in parts))
    return cylinders


def convert_value(text: str, kind: Any) -> Any:
    """
    Convert a text value to a configuration type.

    Supported kinds: int, float, str, bool, 'optional_float', 'int_list',
    'float_list', 'str_list', 'int_tuple', 'float_tuple', 'optional_int_tuple',
    'cylinders'.

    Args:
        text: Raw value text
        kind: Target type or kind name

    Returns:
        Converted value

    Raises:
        ValueError: If the text cannot be converted
    """
    text = text.strip()
    try:
        if kind is bool:
            return convert_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        if kind == 'optional_float':
            return None if text.lower() in NONE_VALUES else float(text)
        if kind == 'int_list':
            return convert_int_list(text)
        if kind == 'float_list':
            return convert_float_list(text)
        if kind == 'str_list':
            return split_list(text)
        if kind == 'int_tuple':
            return tuple(convert_int_list(text))
        if kind == 'float_tuple':
            return tuple(convert_float_list(text))
        if kind == 'optional_int_tuple':
            return None if text.lower() in NONE_VALUES else tuple(convert_int_list(text))
        if kind == 'cylinders':
            return parse_cylinders(text)
    except ValueError as e:
        logger.debug(f"Conversion of {text!r} to {kind} failed: {e}")
        raise ValueError(f"Cannot convert {text!r} to {getattr(kind, '__name__', kind)}") from e

    raise ValueError(f"Unknown conversion kind: {kind}")

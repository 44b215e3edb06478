"""
Utility module for formatting run results.
Provides consistent formatting for console summaries and exported tables.
"""

import math
from typing import Union


def format_metric(value: float, digits: int = 6) -> str:
    """Format a metric with significant digits; non-finite values are spelled out."""
    if value is None:
        return "N/A"
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"


def format_percent(value: float) -> str:
    """Signed percentage, e.g. "-37.2%"."""
    if value is None or math.isnan(value):
        return "N/A"
    if math.isinf(value):
        return "+inf%" if value > 0 else "-inf%"
    return f"{value:+.1f}%"


def format_count(value: Union[int, float]) -> str:
    """Integer with thousands separators."""
    return f"{int(value):,}"


def format_duration(seconds: Union[int, float]) -> str:
    """
    Convert a duration in seconds to a human-readable form.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted duration (e.g., "1h 02m 03s", "4.2s")
    """
    if seconds is None or seconds < 0:
        return "Unknown"
    if seconds < 60:
        return f"{seconds:.1f}s"

    minutes, secs = divmod(int(round(seconds)), 60)
    hours, minutes = divmod(minutes, 60)
    if hours:
        return f"{hours}h {minutes:02d}m {secs:02d}s"
    return f"{minutes}m {secs:02d}s"


def format_file_size(size_in_bytes: Union[int, float]) -> str:
    """
    Convert file size in bytes to a human-readable format.

    Args:
        size_in_bytes: File size in bytes

    Returns:
        Formatted file size string (e.g., "2.5 MB")
    """
    if size_in_bytes is None or size_in_bytes < 0:
        return "Unknown"

    units = ['B', 'KB', 'MB', 'GB', 'TB']
    size = float(size_in_bytes)
    unit_index = 0

    while size >= 1024.0 and unit_index < len(units) - 1:
        size /= 1024.0
        unit_index += 1

    if unit_index == 0:
        return f"{int(size)} {units[unit_index]}"
    return f"{size:.2f} {units[unit_index]}"

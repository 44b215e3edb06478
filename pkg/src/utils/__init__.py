"""
Wake Forecast - Utils Package

Modules:
    - logger: Logging configuration and utilities
    - validators: Input validation functions
    - exporters: CSV/text tables and PGM/PPM field images
    - converters: Config value conversion
    - formatters: Text formatting of metrics, durations and sizes
"""

import os
import sys
import platform
from typing import Any, Dict

# Utils package version
__version__ = '1.0.0'

__all__ = [
    'get_system_info',
]


def get_system_info() -> Dict[str, Any]:
    """
    Get system information for run logs.

    Returns:
        Dictionary with system information
    """
    info: Dict[str, Any] = {
        'platform': platform.platform(),
        'python_version': platform.python_version(),
        'python_implementation': platform.python_implementation(),
        'processor': platform.processor(),
        'cpu_count': os.cpu_count(),
        'executable': sys.executable,
    }
    try:
        import numpy
        info['numpy_version'] = numpy.__version__
    except ImportError:
        info['numpy_version'] = None
    return info

#!/usr/bin/env python3
"""
Wake Forecast - Main Application

Cylinder-wake simulation and ConvLSTM flow-field forecasting.
This file serves as the entry point for the command-line tool.
"""

import os
import sys

# Ensure the src package is in the path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

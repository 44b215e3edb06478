"""
Wake Forecast - Core Package

Modules:
    - tensor: Tensor helpers, seeded random streams and initializers
    - file_handler: VTEN tensors, manifests, snapshot streams and checkpoints
    - solver: Incompressible flow past cylinders on a staggered grid
    - layers: Convolutions, dense, squeeze-and-excitation and residual blocks
    - convlstm: Convolutional LSTM cell and sequence layer
    - model: Standard and improved forecasting models
    - dataset: Windowed, normalized and split sequence datasets
    - training: Adam training, metrics, rollouts and model comparison
"""

import logging
import importlib
from typing import Dict, Tuple

# Setup package-level logger
logger = logging.getLogger(__name__)

# Core package version
__version__ = '1.0.0'

REQUIRED_PACKAGES = {
    'numpy': 'numpy',
    'PIL': 'Pillow',
    'pandas': 'pandas',
    'cv2': 'opencv-python',
}


def check_dependencies() -> Tuple[bool, Dict[str, bool]]:
    """
    Check that the required packages can be imported.

    Returns:
        tuple: (all_required_available, available_packages)
    """
    available = {}
    for package, pip_name in REQUIRED_PACKAGES.items():
        try:
            importlib.import_module(package)
            available[package] = True
        except ImportError:
            available[package] = False
            logger.warning(f"Required package not available: {package} (pip install {pip_name})")
    return all(available.values()), available

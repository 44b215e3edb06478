"""
Wake Forecast

Two-dimensional cylinder-wake simulation, windowed sequence datasets and
ConvLSTM forecasting models (a standard stacked baseline and an improved
variant with a residual / squeeze-and-excitation front end).

Modules:
    - core: Solver, tensor I/O, layers, models, datasets and training
    - cli: Command-line interface
    - utils: Logging, validation, conversion, formatting and export helpers
"""

__version__ = '1.0.0'
__license__ = 'MIT'

# Package metadata
package_info = {
    'name': 'wake-forecast',
    'version': __version__,
    'description': 'Cylinder-wake simulation and ConvLSTM flow-field forecasting',
    'license': __license__,
}

__all__ = [
    'package_info',
]

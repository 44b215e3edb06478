"""
Exporters Module

This module provides functionality for exporting run results: tables as CSV
and aligned plain text, and flow fields as binary PGM/PPM images. Files go
through FileHandler, which uses pandas and Pillow when they are installed.

Field images map the minimum value to pixel 0 and the maximum to 255; a
constant field renders as mid-gray 128. Rows are flipped so that y points up.
"""

import logging
from datetime import datetime
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..core.file_handler import PANDAS_AVAILABLE, FileHandler

if PANDAS_AVAILABLE:
    import pandas as pd

# Get the package logger
logger = logging.getLogger(__name__)

MID_GRAY = 128
SEPARATOR_WIDTH = 2


# ----------------------------------------------------------------------
# Tables
# ----------------------------------------------------------------------


class ResultExporter:
    """
    Writes tabular run results.

    Every method returns True on success and False (after logging) on failure.
    """

    def __init__(self, float_format: str = "%.10g"):
        """
        Initialize the ResultExporter.

        Args:
            float_format: printf-style format for floats in CSV files
        """
        self.float_format = float_format
        self.files = FileHandler(float_format=float_format)
        logger.debug("ResultExporter initialized")

    def export_to_csv(self, rows: Sequence[Mapping[str, Any]], output_file: str,
                      columns: Optional[List[str]] = None) -> bool:
        """
        Export rows to a CSV file.

        Args:
            rows: One mapping per row
            output_file: Path to the output file
            columns: Column order (keys of the first row by default)

        Returns:
            True if successful, False otherwise
        """
        try:
            count = self.files.save_table(rows, output_file, columns=columns)
            logger.info(f"Exported {count} rows to CSV: {output_file}")
            return True
        except (OSError, ValueError) as e:
            logger.error(f"Error exporting to CSV: {e}")
            return False

    def export_to_text(self, rows: Sequence[Mapping[str, Any]], output_file: str,
                       title: Optional[str] = None, formatters: Optional[Dict[str, Any]] = None) -> bool:
        """
        Export rows as an aligned plain-text table.

        Args:
            rows: One mapping per row
            output_file: Path to the output file
            title: Optional heading
            formatters: Per-column callables passed to DataFrame.to_string

        Returns:
            True if successful, False otherwise
        """
        try:
            text = table_to_text(rows, formatters=formatters)
            with open(output_file, 'w', encoding='utf-8') as f:
                if title:
                    f.write(f"{title}\n")
                    f.write("=" * len(title) + "\n")
                    f.write(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n\n")
                f.write(text + "\n")
            logger.info(f"Exported table to text file: {output_file}")
            return True
        except (OSError, ValueError) as e:
            logger.error(f"Error exporting to text file: {e}")
            return False

    def export_forces(self, records, output_file: str) -> bool:
        """Force coefficient history: t, cyl_index, drag and lift coefficients."""
        rows = [{"t": t, "cyl_index": index, "cd": cd, "cl": cl}
                for record in records for t, index, cd, cl in record.rows()]
        return self.export_to_csv(rows, output_file, columns=["t", "cyl_index", "cd", "cl"])

    def export_history(self, report, output_file: str) -> bool:
        """Per-epoch training history."""
        return self.export_to_csv(report.history_rows(), output_file,
                                  columns=["epoch", "train_loss", "val_mae", "val_mse", "val_ssim", "seconds"])

    def export_horizon_metrics(self, triples, output_file: str) -> bool:
        """Rollout metrics per lead time."""
        rows = [{"horizon": lead, **triple.as_dict()} for lead, triple in enumerate(triples, start=1)]
        return self.export_to_csv(rows, output_file, columns=["horizon", "mae", "mse", "ssim"])


def table_to_text(rows: Sequence[Mapping[str, Any]], formatters: Optional[Dict[str, Any]] = None) -> str:
    """Aligned plain-text rendering of rows."""
    rows = list(rows)
    if PANDAS_AVAILABLE:
        return pd.DataFrame(rows).to_string(index=False, formatters=formatters)

    formatters = formatters or {}
    columns = list(rows[0].keys()) if rows else []
    cells = [[str(formatters[key](row[key]) if key in formatters else row[key]) for key in columns] for row in rows]
    widths = [max([len(key)] + [len(line[k]) for line in cells]) for k, key in enumerate(columns)]
    lines = [" ".join(key.rjust(width) for key, width in zip(columns, widths))]
    lines += [" ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in cells]
    return "\n".join(lines)


# ----------------------------------------------------------------------
# Field images
# ----------------------------------------------------------------------


def blue_white_red_colormap() -> np.ndarray:
    """
    Fixed 256-entry colormap: blue (0, 0, 255) at 0, white at 127.5, red (255, 0, 0) at 255.

    Returns:
        uint8 array (256, 3)
    """
    t = np.arange(256, dtype=np.float64) / 255.0
    rising = np.clip(t / 0.5, 0.0, 1.0)
    falling = np.clip((1.0 - t) / 0.5, 0.0, 1.0)
    table = np.stack([rising, np.minimum(rising, falling), falling], axis=1)
    return np.rint(255.0 * table).astype(np.uint8)


def quantize_field(field: np.ndarray, value_range: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Map a 2D field linearly to pixel values.

    Args:
        field: (rows, cols) values, row 0 at the bottom of the domain
        value_range: (low, high) to use instead of the field's min and max

    Returns:
        uint8 array in array orientation (not flipped)
    """
    values = np.asarray(field, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"A field image needs a 2D array, got shape {values.shape}")
    low, high = (float(values.min()), float(values.max())) if value_range is None else map(float, value_range)
    if not high > low:
        return np.full(values.shape, MID_GRAY, dtype=np.uint8)
    scaled = np.rint((values - low) / (high - low) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def _to_image_rows(pixels: np.ndarray) -> np.ndarray:
    # image row 0 is the top of the domain
    return np.ascontiguousarray(pixels[::-1])


def write_pgm(pixels: np.ndarray, output_file: str) -> None:
    """Write quantized pixels as binary PGM (P5)."""
    FileHandler().save_image(_to_image_rows(pixels), output_file)
    logger.debug(f"Wrote PGM {pixels.shape} to {output_file}")


def write_ppm(pixels: np.ndarray, output_file: str, colormap: Optional[np.ndarray] = None) -> None:
    """Write quantized pixels through a colormap as binary PPM (P6)."""
    table = blue_white_red_colormap() if colormap is None else colormap
    FileHandler().save_image(_to_image_rows(table[pixels]), output_file)
    logger.debug(f"Wrote PPM {pixels.shape} to {output_file}")


def read_pgm(path: str) -> np.ndarray:
    """
    Read a PGM written by write_pgm.

    Returns:
        uint8 pixels in array orientation (row 0 at the bottom)
    """
    image = FileHandler().load_image(path)
    if image.ndim != 2:
        raise ValueError(f"{path} is not a grayscale image")
    return image[::-1].copy()


def read_ppm(path: str) -> np.ndarray:
    """Read a PPM written by write_ppm as (rows, cols, 3) uint8 in array orientation."""
    image = FileHandler().load_image(path)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return image[::-1].copy()


def render_field(field: np.ndarray, output_base: str, color: bool = False,
                 value_range: Optional[Sequence[float]] = None) -> List[str]:
    """
    Render a field to <output_base>.pgm and optionally <output_base>.ppm.

    Returns:
        Paths written
    """
    pixels = quantize_field(field, value_range)
    paths = [f"{output_base}.pgm"]
    write_pgm(pixels, paths[0])
    if color:
        paths.append(f"{output_base}.ppm")
        write_ppm(pixels, paths[1])
    return paths


def triptych_pixels(truth: np.ndarray, prediction: np.ndarray) -> np.ndarray:
    """
    Truth, prediction and absolute error side by side.

    Truth and prediction share one value range; the error panel uses its own.
    Panels are separated by white columns.
    """
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.shape != prediction.shape:
        raise ValueError(f"Truth {truth.shape} and prediction {prediction.shape} differ in shape")
    shared = (min(truth.min(), prediction.min()), max(truth.max(), prediction.max()))
    separator = np.full((truth.shape[0], SEPARATOR_WIDTH), 255, dtype=np.uint8)
    panels = [quantize_field(truth, shared), separator, quantize_field(prediction, shared), separator,
              quantize_field(np.abs(truth - prediction))]
    return np.concatenate(panels, axis=1)


def render_triptych(truth: np.ndarray, prediction: np.ndarray, output_base: str, color: bool = False) -> List[str]:
    """Write a truth/prediction/error triptych as PGM (and PPM)."""
    pixels = triptych_pixels(truth, prediction)
    paths = [f"{output_base}.pgm"]
    write_pgm(pixels, paths[0])
    if color:
        paths.append(f"{output_base}.ppm")
        write_ppm(pixels, paths[1])
    logger.info(f"Rendered triptych to {paths[0]}")
    return paths

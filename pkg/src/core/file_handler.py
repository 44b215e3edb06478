"""
File Handler Module

This module provides the on-disk formats of the engine: VTEN tensor files,
plain "key = value" manifests, snapshot directories written by the solver,
and model checkpoints. FileHandler bundles them for a command run and writes
CSV tables, PGM/PPM images and resampled frames with pandas, Pillow and
OpenCV when available.

VTEN layout (all little-endian):
    b"VTEN" | u8 dtype code (0=f64, 1=f32) | u8 rank | rank x u32 dims | raw values
"""

import os
import csv
import shutil
import struct
import hashlib
import logging
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .tensor import DTYPE_CODES

# Get the package logger
logger = logging.getLogger(__name__)

# Try to import optional dependencies with fallbacks
try:
    import pandas as pd
    PANDAS_AVAILABLE = True
except ImportError:
    logger.info("pandas library not available. Tables will be written with the csv module.")
    PANDAS_AVAILABLE = False

try:
    from PIL import Image
    PIL_AVAILABLE = True
except ImportError:
    logger.info("PIL/Pillow library not available. Field images will be written as raw PGM/PPM.")
    PIL_AVAILABLE = False

try:
    import cv2
    OPENCV_AVAILABLE = True
except ImportError:
    logger.info("OpenCV library not available. Frames will be resampled by block averaging.")
    OPENCV_AVAILABLE = False

VTEN_MAGIC = b"VTEN"
MANIFEST_NAME = "manifest.txt"
WEIGHTS_DIR = "weights"
FORCES_NAME = "forces.csv"
SNAPSHOT_FIELDS = ("u", "v", "p")

_CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


class ArtifactError(FileNotFoundError):
    """Raised when an expected artifact is missing or malformed."""


# ----------------------------------------------------------------------
# VTEN tensors
# ----------------------------------------------------------------------

def encode_tensor(tensor: np.ndarray) -> bytes:
    """
    Serialize a tensor to VTEN bytes.

    Args:
        tensor: float64 or float32 array

    Returns:
        Encoded bytes

    Raises:
        ValueError: If the dtype is unsupported or a dimension is zero
    """
    array = np.asarray(tensor)
    if array.dtype not in DTYPE_CODES:
        raise ValueError(f"Unsupported tensor dtype for VTEN: {array.dtype}")
    if array.ndim > 255:
        raise ValueError(f"Tensor rank {array.ndim} exceeds VTEN limit")
    if any(dim <= 0 for dim in array.shape):
        raise ValueError(f"VTEN dims must be positive, got {array.shape}")

    header = VTEN_MAGIC + struct.pack("<BB", DTYPE_CODES[array.dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    body = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()
    return header + body


def decode_tensor(payload: bytes) -> np.ndarray:
    """
    Parse VTEN bytes.

    Args:
        payload: Encoded tensor

    Returns:
        Decoded array in native byte order

    Raises:
        ValueError: On a bad magic, unknown dtype code or truncated payload
    """
    if payload[:4] != VTEN_MAGIC:
        raise ValueError("Not a VTEN tensor (bad magic)")
    code, rank = struct.unpack_from("<BB", payload, 4)
    if code not in _CODE_DTYPES:
        raise ValueError(f"Unknown VTEN dtype code: {code}")
    shape = struct.unpack_from(f"<{rank}I", payload, 6)
    offset = 6 + 4 * rank

    dtype = _CODE_DTYPES[code].newbyteorder("<")
    count = int(np.prod(shape)) if rank else 1
    expected = count * dtype.itemsize
    if len(payload) - offset != expected:
        raise ValueError(f"VTEN payload has {len(payload) - offset} data bytes, expected {expected}")

    data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    return data.astype(_CODE_DTYPES[code]).reshape(shape)


def write_tensor(path: str, tensor: np.ndarray) -> None:
    """Write a tensor to a VTEN file."""
    with open(path, "wb") as f:
        f.write(encode_tensor(tensor))
    logger.debug(f"Wrote tensor {np.shape(tensor)} to {path}")


def read_tensor(path: str) -> np.ndarray:
    """
    Read a VTEN file.

    Raises:
        ArtifactError: If the file does not exist
    """
    if not os.path.isfile(path):
        logger.error(f"Tensor file not found: {path}")
        raise ArtifactError(f"Tensor file not found: {path}")
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def tensor_file_size(tensor: np.ndarray) -> int:
    """Size in bytes of the VTEN encoding of a tensor."""
    array = np.asarray(tensor)
    return 6 + 4 * array.ndim + array.size * array.dtype.itemsize


# ----------------------------------------------------------------------
# Manifests
# ----------------------------------------------------------------------

def format_manifest_value(value: Any) -> str:
    """Render a value for a manifest line; floats keep full precision."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_manifest_value(item) for item in value)
    if value is None:
        return ""
    return str(value)


def write_manifest(path: str, entries: Mapping[str, Any], title: Optional[str] = None) -> None:
    """
    Write a plain "key = value" manifest.

    Args:
        path: Destination file (a directory means <dir>/manifest.txt)
        entries: Ordered key/value pairs
        title: Optional comment line written first
    """
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        if title:
            f.write(f"# {title}\n")
        for key, value in entries.items():
            if "=" in key or "\n" in key:
                raise ValueError(f"Invalid manifest key: {key!r}")
            f.write(f"{key} = {format_manifest_value(value)}\n")
    logger.debug(f"Wrote manifest with {len(entries)} entries to {path}")


def read_manifest(path: str) -> Dict[str, str]:
    """
    Read a "key = value" manifest into a dict of strings.

    Raises:
        ArtifactError: If the manifest does not exist
    """
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(path):
        logger.error(f"Manifest not found: {path}")
        raise ArtifactError(f"Manifest not found: {path}")

    entries: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_number}: expected 'key = value'")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def get_file_hash(file_path: str, algorithm: str = "sha256") -> str:
    """
    Calculate the hash of a file.

    Args:
        file_path: Path to the file
        algorithm: hashlib algorithm name

    Returns:
        Hex digest
    """
    hash_func = getattr(hashlib, algorithm)()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hash_func.update(chunk)
    return hash_func.hexdigest()


# ----------------------------------------------------------------------
# Directories
# ----------------------------------------------------------------------

def prepare_output_directory(directory: str, force: bool = False) -> str:
    """
    Create an output directory, refusing to reuse a non-empty one.

    Args:
        directory: Target directory
        force: Remove existing contents instead of refusing

    Returns:
        Absolute path of the directory

    Raises:
        FileExistsError: If the directory exists, is not empty and force is False
    """
    directory = os.path.abspath(directory)
    if os.path.exists(directory) and os.listdir(directory):
        if not force:
            logger.error(f"Output directory already exists: {directory}")
            raise FileExistsError(f"Output directory already exists: {directory} (use --force)")
        logger.warning(f"Removing existing output directory: {directory}")
        shutil.rmtree(directory)
    os.makedirs(directory, exist_ok=True)
    return directory


@contextmanager
def atomic_directory(directory: str) -> Iterator[str]:
    """
    Build a directory under a temporary name and rename it into place.

    Yields:
        Path of the temporary directory to populate
    """
    directory = os.path.abspath(directory)
    parent = os.path.dirname(directory)
    os.makedirs(parent, exist_ok=True)
    temp_dir = tempfile.mkdtemp(prefix=f".{os.path.basename(directory)}.", dir=parent)
    try:
        yield temp_dir
        if os.path.exists(directory):
            backup = directory + ".old"
            shutil.rmtree(backup, ignore_errors=True)
            os.replace(directory, backup)
            os.replace(temp_dir, directory)
            shutil.rmtree(backup, ignore_errors=True)
        else:
            os.replace(temp_dir, directory)
        logger.debug(f"Atomically published {directory}")
    except BaseException:
        shutil.rmtree(temp_dir, ignore_errors=True)
        raise


# ----------------------------------------------------------------------
# Snapshot directories
# ----------------------------------------------------------------------

def snapshot_file(directory: str, index: int, field_name: str) -> str:
    return os.path.join(directory, f"frame_{index:06d}_{field_name}.vten")


class SnapshotWriter:
    """
    Streams flow snapshots into a directory as VTEN files.

    The manifest is written by ``close`` once the final snapshot count is known.
    """

    def __init__(self, directory: str):
        """
        Initialize the SnapshotWriter.

        Args:
            directory: Existing, empty output directory
        """
        self.directory = directory
        self.count = 0
        self.grid_shape: Optional[Tuple[int, int]] = None
        self.times: List[float] = []

    def write(self, snapshot) -> None:
        """Write the u, v and p fields of one snapshot."""
        for field_name in SNAPSHOT_FIELDS:
            write_tensor(snapshot_file(self.directory, self.count, field_name),
                         getattr(snapshot, field_name))
        self.grid_shape = snapshot.u.shape
        self.times.append(float(snapshot.t))
        self.count += 1
        if self.count % 100 == 0:
            logger.info(f"Wrote {self.count} snapshots to {self.directory}")

    def close(self, config_entries: Mapping[str, Any], extra: Optional[Mapping[str, Any]] = None) -> None:
        """
        Write the snapshot manifest.

        Args:
            config_entries: Solver configuration echo
            extra: Additional run information (config hash, seed, ...)
        """
        entries: Dict[str, Any] = dict(config_entries)
        entries["snapshot_count"] = self.count
        if self.grid_shape is not None:
            entries["grid_rows"], entries["grid_cols"] = self.grid_shape
        if self.times:
            entries["first_snapshot_time"] = self.times[0]
            entries["last_snapshot_time"] = self.times[-1]
        if extra:
            entries.update(extra)
        write_manifest(os.path.join(self.directory, MANIFEST_NAME), entries,
                       title="flow snapshot stream")
        logger.info(f"Snapshot stream closed with {self.count} frames")


def load_snapshot_frames(directory: str, channels: Sequence[str]) -> Tuple[Dict[str, str], np.ndarray, np.ndarray]:
    """
    Load the requested channels of every snapshot in a directory.

    Args:
        directory: Snapshot directory written by SnapshotWriter
        channels: Ordered subset of u, v, p

    Returns:
        Tuple of (manifest, times (N,), frames (N, C, ny, nx))

    Raises:
        ArtifactError: If the manifest or a frame file is missing
    """
    manifest = read_manifest(directory)
    count = int(manifest.get("snapshot_count", "0"))
    interval = float(manifest["sample_interval"])
    for name in channels:
        if name not in SNAPSHOT_FIELDS:
            raise ValueError(f"Unknown snapshot channel: {name}")

    frames = []
    for index in range(count):
        frames.append(np.stack([read_tensor(snapshot_file(directory, index, name)) for name in channels]))
    times = interval * np.arange(1, count + 1, dtype=np.float64)
    logger.info(f"Loaded {count} snapshots ({', '.join(channels)}) from {directory}")
    if not frames:
        return manifest, times, np.zeros((0, len(channels), 0, 0))
    return manifest, times, np.stack(frames)


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(directory: str, params: Mapping[str, np.ndarray], entries: Mapping[str, Any]) -> str:
    """
    Atomically write a checkpoint: manifest plus one VTEN file per weight.

    Args:
        directory: Checkpoint directory (replaced if it exists)
        params: Named weight tensors
        entries: Manifest entries (config echo, epoch, metrics)

    Returns:
        The checkpoint directory
    """
    with atomic_directory(directory) as staging:
        weights_dir = os.path.join(staging, WEIGHTS_DIR)
        os.makedirs(weights_dir)
        for name, value in params.items():
            write_tensor(os.path.join(weights_dir, f"{name}.vten"), value)
        manifest = dict(entries)
        manifest["weight_names"] = list(params.keys())
        manifest["weight_bytes"] = sum(tensor_file_size(value) for value in params.values())
        write_manifest(os.path.join(staging, MANIFEST_NAME), manifest, title="model checkpoint")
    logger.info(f"Saved checkpoint with {len(params)} tensors to {directory}")
    return directory


def load_checkpoint(directory: str) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """
    Load a checkpoint written by save_checkpoint.

    Returns:
        Tuple of (manifest, ordered params)

    Raises:
        ArtifactError: If the checkpoint is missing or incomplete
    """
    manifest = read_manifest(directory)
    names = [name.strip() for name in manifest.get("weight_names", "").split(",") if name.strip()]
    params = {name: read_tensor(os.path.join(directory, WEIGHTS_DIR, f"{name}.vten")) for name in names}
    logger.debug(f"Loaded checkpoint {directory} with {len(params)} tensors")
    return manifest, params


# ----------------------------------------------------------------------
# FileHandler
# ----------------------------------------------------------------------

class FileHandler:
    """
    Artifact I/O for one command run.

    Wraps the manifest, checkpoint and output-directory helpers with the run's
    overwrite policy, and writes tables, field images and resampled frames
    through pandas, Pillow and OpenCV when they are installed, falling back to
    the standard library and numpy otherwise.
    """

    def __init__(self, force: bool = False, float_format: str = "%.10g"):
        """
        Initialize the FileHandler.

        Args:
            force: Whether existing output directories may be replaced
            float_format: printf-style format for floats in CSV files
        """
        self.force = force
        self.float_format = float_format

    # Run artifacts

    def prepare_output_directory(self, directory: str) -> str:
        return prepare_output_directory(directory, force=self.force)

    def write_manifest(self, directory: str, entries: Mapping[str, Any], title: Optional[str] = None) -> str:
        """Write <directory>/manifest.txt and return its path."""
        path = os.path.join(directory, MANIFEST_NAME)
        write_manifest(path, entries, title=title)
        return path

    def read_manifest(self, directory: str) -> Dict[str, str]:
        return read_manifest(directory)

    def save_checkpoint(self, directory: str, params: Mapping[str, np.ndarray], entries: Mapping[str, Any]) -> str:
        return save_checkpoint(directory, params, entries)

    def load_checkpoint(self, directory: str) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
        return load_checkpoint(directory)

    def get_file_hash(self, file_path: str, algorithm: str = "sha256") -> Optional[str]:
        """Hex digest of a file, or None (after logging) when it cannot be read."""
        try:
            return get_file_hash(file_path, algorithm)
        except (OSError, AttributeError) as e:
            logger.error(f"Error calculating file hash for {file_path}: {e}")
            return None

    def get_supported_formats(self) -> Dict[str, List[str]]:
        """Formats this installation can write, and the libraries behind them."""
        return {
            "tensor": [".vten"],
            "table": [".csv", ".txt"],
            "image": [".pgm", ".ppm"],
            "libraries": [name for name, available in (("pandas", PANDAS_AVAILABLE), ("Pillow", PIL_AVAILABLE),
                                                        ("opencv-python", OPENCV_AVAILABLE)) if available],
        }

    # Tables

    def save_table(self, rows: Sequence[Mapping[str, Any]], output_file: str,
                   columns: Optional[List[str]] = None) -> int:
        """
        Write rows as CSV.

        Args:
            rows: One mapping per row
            output_file: Destination path
            columns: Column order (keys of the first row by default)

        Returns:
            Number of rows written
        """
        rows = list(rows)
        if PANDAS_AVAILABLE:
            frame = pd.DataFrame(rows, columns=columns)
            frame.to_csv(output_file, index=False, float_format=self.float_format)
            return len(frame)

        columns = columns or (list(rows[0].keys()) if rows else [])
        with open(output_file, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: self._format_cell(row.get(key)) for key in columns})
        return len(rows)

    def _format_cell(self, value: Any) -> Any:
        if isinstance(value, (float, np.floating)):
            return self.float_format % value
        return "" if value is None else value

    # Images

    def save_image(self, pixels: np.ndarray, output_file: str) -> None:
        """
        Write uint8 pixels in image orientation as binary PGM (rows, cols) or PPM (rows, cols, 3).

        Raises:
            ValueError: On any other shape or dtype
        """
        pixels = np.ascontiguousarray(pixels)
        if pixels.dtype != np.uint8 or not (pixels.ndim == 2 or (pixels.ndim == 3 and pixels.shape[2] == 3)):
            raise ValueError(f"Expected uint8 (rows, cols) or (rows, cols, 3) pixels, "
                             f"got {pixels.dtype} {pixels.shape}")
        if PIL_AVAILABLE:
            Image.fromarray(pixels).save(output_file, format="PPM")
            return
        magic = b"P5" if pixels.ndim == 2 else b"P6"
        with open(output_file, "wb") as f:
            f.write(magic + f"\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
            f.write(pixels.tobytes())

    def load_image(self, path: str) -> np.ndarray:
        """
        Read a binary PGM or PPM in image orientation.

        Returns:
            uint8 (rows, cols) for PGM, (rows, cols, 3) for PPM

        Raises:
            ArtifactError: If the file is missing
            ValueError: If it is not an 8-bit P5/P6 image
        """
        if not os.path.isfile(path):
            raise ArtifactError(f"Missing image: {path}")
        if PIL_AVAILABLE:
            with Image.open(path) as image:
                if image.mode not in ("L", "RGB"):
                    raise ValueError(f"{path} is not an 8-bit gray or RGB image (mode {image.mode})")
                return np.asarray(image).copy()

        with open(path, "rb") as f:
            data = f.read()
        tokens: List[bytes] = []
        offset = 0
        while len(tokens) < 4:
            while offset < len(data) and data[offset:offset + 1].isspace():
                offset += 1
            if data[offset:offset + 1] == b"#":
                offset = data.index(b"\n", offset)
                continue
            end = offset
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            if end == offset:
                raise ValueError(f"{path} has a truncated image header")
            tokens.append(data[offset:end])
            offset = end
        magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
        if magic not in (b"P5", b"P6") or maxval != 255:
            raise ValueError(f"{path} is not an 8-bit binary PGM/PPM image")
        depth = 1 if magic == b"P5" else 3
        pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * depth, offset=offset + 1)
        return pixels.reshape((height, width) if depth == 1 else (height, width, 3)).copy()

    # Frames

    def resize_frames(self, frames: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
        """
        Area-average every (N, C) plane of (N, C, h, w) frames to (height, width).

        Without OpenCV only integer shrink factors are supported.

        Raises:
            ValueError: If the fallback cannot produce the requested size
        """
        height, width = size
        if frames.shape[-2:] == (height, width):
            return frames
        n, c, h, w = frames.shape
        if OPENCV_AVAILABLE:
            out = np.empty((n, c, height, width), dtype=np.float64)
            for i in range(n):
                for j in range(c):
                    out[i, j] = cv2.resize(np.ascontiguousarray(frames[i, j], dtype=np.float64), (width, height),
                                           interpolation=cv2.INTER_AREA)
            return out
        if h % height or w % width:
            raise ValueError(f"Resampling {h}x{w} to {height}x{width} needs opencv-python "
                             f"(block averaging handles integer factors only)")
        blocks = np.asarray(frames, dtype=np.float64).reshape(n, c, height, h // height, width, w // width)
        return blocks.mean(axis=(3, 5))

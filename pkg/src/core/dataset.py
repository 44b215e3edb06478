"""
Dataset Module

This module turns solver snapshot streams into normalized, windowed training
samples with a reproducible train/validation/test split.

Pipeline per source directory:
    drop transient frames -> crop the wake -> area-resample -> window
Normalization statistics come from the frames covered by training windows only.
"""

import os
import math
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import file_handler
from .file_handler import ArtifactError, MANIFEST_NAME
from .tensor import Rng
from ..utils.converters import convert_float_list, convert_int_list, parse_cylinders, split_list

# Get the package logger
logger = logging.getLogger(__name__)

CHANNEL_NAMES = ("u", "v", "p")
SAMPLES_DIR = "samples"
MIN_SPLIT_SIZE = 10


class DatasetError(ValueError):
    """Raised when a dataset cannot be built or loaded."""


@dataclass
class DatasetSpec:
    """
    Dataset construction parameters.

    Attributes:
        sources: Snapshot directories
        crop: (row0, col0, height, width) in grid cells; None selects the wake behind the first cylinder
        resize: (height, width) after cropping; None keeps the crop size
        channels: Ordered subset of u, v, p
        t_in, t_out: Input and target frames per sample
        stride: Frame offset between consecutive windows
        split_seed: Seed of the split permutation
        fractions: (train, val, test) shares
        transient_fraction: Leading share of each source's frames to drop
    """
    sources: List[str] = field(default_factory=list)
    crop: Optional[Tuple[int, int, int, int]] = None
    resize: Optional[Tuple[int, int]] = (64, 128)
    channels: Tuple[str, ...] = ("u", "v")
    t_in: int = 10
    t_out: int = 1
    stride: int = 1
    split_seed: int = 0
    fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    transient_fraction: float = 0.25

    @property
    def window(self) -> int:
        return self.t_in + self.t_out

    def validate(self) -> "DatasetSpec":
        """
        Check the spec.

        Raises:
            DatasetError: Describing the first invalid field
        """
        if self.t_out < 1:
            raise DatasetError("t_out must be at least 1 (targets required)")
        if self.t_in < 1:
            raise DatasetError("t_in must be at least 1")
        if self.stride < 1:
            raise DatasetError("stride must be at least 1")
        if not self.channels or len(set(self.channels)) != len(self.channels):
            raise DatasetError(f"channels must be a non-empty list without repeats, got {self.channels}")
        unknown = [name for name in self.channels if name not in CHANNEL_NAMES]
        if unknown:
            raise DatasetError(f"Unknown channels: {', '.join(unknown)}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DatasetError(f"Split fractions must be three non-negative shares summing to 1, got {self.fractions}")
        if self.crop is not None and (len(self.crop) != 4 or min(self.crop) < 0 or min(self.crop[2:]) < 1):
            raise DatasetError(f"Crop must be (row0, col0, height, width) with positive size, got {self.crop}")
        if self.resize is not None and (len(self.resize) != 2 or min(self.resize) < 1):
            raise DatasetError(f"Resize must be (height, width), got {self.resize}")
        if not 0.0 <= self.transient_fraction < 1.0:
            raise DatasetError("transient_fraction must be in [0, 1)")
        return self

    def to_mapping(self) -> Dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    @classmethod
    def from_manifest(cls, entries: Mapping[str, str]) -> "DatasetSpec":
        """Rebuild a spec from the manifest of a saved dataset."""
        def optional_ints(text: str):
            return tuple(convert_int_list(text)) if text else None

        return cls(
            sources=split_list(entries.get("sources", "")),
            crop=optional_ints(entries.get("crop", "")),
            resize=optional_ints(entries.get("resize", "")),
            channels=tuple(split_list(entries["channels"])),
            t_in=int(entries["t_in"]),
            t_out=int(entries["t_out"]),
            stride=int(entries["stride"]),
            split_seed=int(entries["split_seed"]),
            fractions=tuple(convert_float_list(entries["fractions"])),
            transient_fraction=float(entries["transient_fraction"]),
        ).validate()


@dataclass
class SequenceSample:
    """One training window: input (T_in, C, h, w) followed by target (T_out, C, h, w)."""
    input: np.ndarray
    target: np.ndarray
    source: int = 0
    start: int = 0


@dataclass
class NormalizationStats:
    """Per-channel min/max of the training split."""
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if np.any(~(self.maximum > self.minimum)):
            logger.error(f"Degenerate channel range: min={self.minimum}, max={self.maximum}")
            raise DatasetError("Normalization requires max > min per channel: max > min violated")

    @staticmethod
    def _broadcast(values: np.ndarray) -> np.ndarray:
        # channel axis is third from the end: (C, h, w) or (T, C, h, w)
        return values.reshape((-1, 1, 1))

    def apply(self, x: np.ndarray) -> np.ndarray:
        low = self._broadcast(self.minimum)
        return (x - low) / (self._broadcast(self.maximum) - low)

    def invert(self, x: np.ndarray) -> np.ndarray:
        low = self._broadcast(self.minimum)
        return x * (self._broadcast(self.maximum) - low) + low


def denormalize(stats: NormalizationStats, x: np.ndarray) -> np.ndarray:
    """Map normalized values back to physical units."""
    return stats.invert(x)


@dataclass
class Dataset:
    """
    Built dataset.

    Attributes:
        spec: Construction parameters
        stats: Training-split normalization
        samples: Every window, in source/start order
        train_indices, val_indices, test_indices: Sample indices per split
        frames: Normalized frame stack per source (N_s, C, h, w)
    """
    spec: DatasetSpec
    stats: NormalizationStats
    samples: List[SequenceSample]
    train_indices: List[int]
    val_indices: List[int]
    test_indices: List[int]
    frames: List[np.ndarray] = field(default_factory=list)

    @property
    def train(self) -> List[SequenceSample]:
        return [self.samples[i] for i in self.train_indices]

    @property
    def val(self) -> List[SequenceSample]:
        return [self.samples[i] for i in self.val_indices]

    @property
    def test(self) -> List[SequenceSample]:
        return [self.samples[i] for i in self.test_indices]

    @property
    def frame_shape(self) -> Tuple[int, int]:
        """(h, w) of every window frame."""
        return tuple(self.samples[0].input.shape[-2:]) if self.samples else (0, 0)


# ----------------------------------------------------------------------
# Splitting
# ----------------------------------------------------------------------

def split(sample_count: int, seed: int, fractions: Sequence[float] = (0.7, 0.1, 0.2)) -> Tuple[List[int], List[int], List[int]]:
    """
    Seeded train/validation/test partition.

    A uniform permutation of range(n) is cut at floor(f_train n + 0.5) and
    floor((f_train + f_val) n + 0.5).

    Args:
        sample_count: Number of samples n (at least 10)
        seed: Permutation seed
        fractions: (train, val, test) shares

    Returns:
        Tuple of (train, val, test) index lists

    Raises:
        DatasetError: If n < 10 or the fractions are invalid
    """
    if sample_count < MIN_SPLIT_SIZE:
        logger.error(f"Cannot split {sample_count} samples (need at least {MIN_SPLIT_SIZE})")
        raise DatasetError(f"Need at least {MIN_SPLIT_SIZE} samples to split, got {sample_count}")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"Split fractions must sum to 1, got {tuple(fractions)}")

    order = [int(i) for i in Rng(seed).permutation(sample_count)]
    first = int(math.floor(fractions[0] * sample_count + 0.5))
    second = int(math.floor((fractions[0] + fractions[1]) * sample_count + 0.5))
    return order[:first], order[first:second], order[second:]


# ----------------------------------------------------------------------
# Frame preparation
# ----------------------------------------------------------------------

def default_crop(manifest: Mapping[str, str]) -> Tuple[int, int, int, int]:
    """
    Wake crop for a snapshot stream: from the first cylinder's downstream edge
    to the outlet minus a 4D buffer, full height.

    Raises:
        DatasetError: If the stream holds no snapshots or has no cylinder
    """
    if "grid_cols" not in manifest or int(manifest.get("snapshot_count", "1")) < 1:
        logger.error("Cannot choose a wake crop for a stream without snapshots")
        raise DatasetError("Snapshot stream holds no snapshots; cannot choose a wake crop (set [dataset] crop "
                           "or simulate more steps)")
    cylinders = parse_cylinders(manifest.get("cylinders", ""))
    if not cylinders:
        raise DatasetError("Snapshot stream has no cylinder; set [dataset] crop explicitly")
    cols = int(manifest["grid_cols"])
    rows = int(manifest["grid_rows"])
    dx = float(manifest["domain_width"]) / cols
    cx, _, diameter = cylinders[0]
    col0 = int(math.ceil((cx + 0.5 * diameter) / dx))
    col1 = cols - int(round(4.0 * diameter / dx))
    if col1 <= col0:
        raise DatasetError(f"No room for a wake crop behind the cylinder (columns {col0}..{col1})")
    return 0, col0, rows, col1 - col0


def crop_frames(frames: np.ndarray, crop: Tuple[int, int, int, int]) -> np.ndarray:
    """
    Crop (N, C, H, W) frames.

    Raises:
        DatasetError: If the region leaves the grid
    """
    row0, col0, height, width = crop
    if row0 + height > frames.shape[-2] or col0 + width > frames.shape[-1]:
        logger.error(f"Crop {crop} exceeds grid {frames.shape[-2:]}")
        raise DatasetError(f"Crop region {crop} lies outside the {frames.shape[-2]}x{frames.shape[-1]} grid")
    return frames[..., row0:row0 + height, col0:col0 + width]


def resize_frames(frames: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Area-average every (N, C) plane to (height, width)."""
    try:
        return file_handler.FileHandler().resize_frames(frames, size)
    except ValueError as e:
        logger.error(str(e))
        raise DatasetError(str(e)) from e


def window_starts(frame_count: int, spec: DatasetSpec) -> List[int]:
    """Start indices of every full window at the configured stride."""
    if frame_count < spec.window:
        return []
    return list(range(0, frame_count - spec.window + 1, spec.stride))


# ----------------------------------------------------------------------
# Building
# ----------------------------------------------------------------------

def build_dataset_from_frames(frame_stacks: Sequence[np.ndarray], spec: DatasetSpec) -> Dataset:
    """
    Build windows, split and normalization from prepared frames.

    Args:
        frame_stacks: Post-transient, cropped and resampled frames per source (N_s, C, h, w)
        spec: Dataset parameters

    Returns:
        Dataset

    Raises:
        DatasetError: On insufficient frames, too few samples or a degenerate range
    """
    spec.validate()
    stacks = [np.asarray(stack, dtype=np.float64) for stack in frame_stacks]
    for stack in stacks:
        if stack.ndim != 4 or stack.shape[1] != len(spec.channels):
            raise DatasetError(f"Frames must be (N, {len(spec.channels)}, h, w), got {stack.shape}")

    available = max((stack.shape[0] for stack in stacks), default=0)
    if available < spec.window:
        logger.error(f"Insufficient frames: need {spec.window}, have {available}")
        raise DatasetError(f"Insufficient frames: {spec.window} required (T_in + T_out), {available} available")

    positions = [(source, start) for source, stack in enumerate(stacks)
                 for start in window_starts(stack.shape[0], spec)]
    train, val, test = split(len(positions), spec.split_seed, spec.fractions)

    # statistics from frames covered by training windows only
    minimum = np.full(len(spec.channels), np.inf)
    maximum = np.full(len(spec.channels), -np.inf)
    for index in train:
        source, start = positions[index]
        window = stacks[source][start:start + spec.window]
        minimum = np.minimum(minimum, window.min(axis=(0, 2, 3)))
        maximum = np.maximum(maximum, window.max(axis=(0, 2, 3)))
    stats = NormalizationStats(minimum, maximum)

    normalized = [np.clip(stats.apply(stack), 0.0, 1.0) for stack in stacks]
    samples = []
    for source, start in positions:
        window = normalized[source][start:start + spec.window]
        samples.append(SequenceSample(input=window[:spec.t_in].copy(), target=window[spec.t_in:].copy(),
                                      source=source, start=start))

    logger.info(f"Built {len(samples)} samples from {len(stacks)} source(s): "
                f"{len(train)} train / {len(val)} val / {len(test)} test")
    return Dataset(spec=spec, stats=stats, samples=samples, train_indices=train,
                   val_indices=val, test_indices=test, frames=normalized)


def prepare_source(directory: str, spec: DatasetSpec) -> np.ndarray:
    """Load one snapshot directory and apply transient removal, crop and resampling."""
    manifest, _, frames = file_handler.load_snapshot_frames(directory, spec.channels)
    if frames.shape[0] == 0:
        logger.error(f"{directory} holds no snapshots")
        raise DatasetError(f"Snapshot directory {directory} holds no snapshots")
    skip = int(math.floor(spec.transient_fraction * frames.shape[0]))
    frames = frames[skip:]
    crop = spec.crop if spec.crop is not None else default_crop(manifest)
    frames = crop_frames(frames, crop)
    if spec.resize is not None and frames.shape[0]:
        frames = resize_frames(frames, spec.resize)
    logger.debug(f"{directory}: dropped {skip} transient frames, crop {crop}, kept {frames.shape}")
    return frames


def build_dataset(spec: DatasetSpec) -> Dataset:
    """
    Build the dataset described by a spec from its snapshot directories.

    Raises:
        DatasetError: If no sources are configured or frames are insufficient
        ArtifactError: If a snapshot directory is missing
    """
    spec.validate()
    if not spec.sources:
        raise DatasetError("No snapshot sources configured")
    return build_dataset_from_frames([prepare_source(directory, spec) for directory in spec.sources], spec)


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def sample_file(directory: str, index: int) -> str:
    return os.path.join(directory, SAMPLES_DIR, f"sample_{index:06d}.vten")


def frames_file(directory: str, source: int) -> str:
    return os.path.join(directory, f"frames_{source:03d}.vten")


def save_dataset(dataset: Dataset, directory: str, extra: Optional[Mapping[str, Any]] = None) -> str:
    """
    Atomically write a dataset directory.

    Layout: manifest.txt, frames_<source>.vten and samples/sample_<index>.vten,
    where each sample file holds the whole (T_in + T_out, C, h, w) window.

    Raises:
        DatasetError: If the dataset has no samples or a source has no frames
    """
    if not dataset.samples:
        raise DatasetError("Cannot save a dataset without samples")
    empty = [source for source, frames in enumerate(dataset.frames) if frames.size == 0]
    if empty:
        logger.error(f"Dataset sources {empty} have no frames")
        raise DatasetError(f"Cannot save dataset: source(s) {', '.join(map(str, empty))} have no frames")
    with file_handler.atomic_directory(directory) as staging:
        os.makedirs(os.path.join(staging, SAMPLES_DIR))
        for index, sample in enumerate(dataset.samples):
            file_handler.write_tensor(sample_file(staging, index),
                                      np.concatenate([sample.input, sample.target]))
        for source, frames in enumerate(dataset.frames):
            file_handler.write_tensor(frames_file(staging, source), frames)

        entries: Dict[str, Any] = dict(dataset.spec.to_mapping())
        entries.update({
            "stats_min": [float(v) for v in dataset.stats.minimum],
            "stats_max": [float(v) for v in dataset.stats.maximum],
            "sample_count": len(dataset.samples),
            "frame_rows": dataset.frame_shape[0],
            "frame_cols": dataset.frame_shape[1],
            "source_count": len(dataset.frames),
            "sample_sources": [s.source for s in dataset.samples],
            "sample_starts": [s.start for s in dataset.samples],
            "train_indices": dataset.train_indices,
            "val_indices": dataset.val_indices,
            "test_indices": dataset.test_indices,
        })
        if extra:
            entries.update(extra)
        file_handler.write_manifest(os.path.join(staging, MANIFEST_NAME), entries, title="windowed dataset")
    logger.info(f"Saved dataset with {len(dataset.samples)} samples to {directory}")
    return directory


def load_dataset(directory: str) -> Tuple[Dataset, Dict[str, str]]:
    """
    Load a dataset written by save_dataset.

    Returns:
        Tuple of (dataset, manifest)

    Raises:
        ArtifactError: If the directory, manifest or a tensor file is missing
        DatasetError: If the manifest is inconsistent
    """
    manifest = file_handler.read_manifest(directory)
    try:
        spec = DatasetSpec.from_manifest(manifest)
        count = int(manifest["sample_count"])
        sources = convert_int_list(manifest["sample_sources"])
        starts = convert_int_list(manifest["sample_starts"])
        splits = [convert_int_list(manifest[key]) for key in ("train_indices", "val_indices", "test_indices")]
        stats = NormalizationStats(convert_float_list(manifest["stats_min"]),
                                   convert_float_list(manifest["stats_max"]))
        source_count = int(manifest["source_count"])
    except KeyError as e:
        logger.error(f"Dataset manifest in {directory} lacks {e}")
        raise ArtifactError(f"Dataset manifest in {directory} lacks key {e}") from e

    if len(sources) != count or len(starts) != count or sorted(sum(splits, [])) != list(range(count)):
        raise DatasetError(f"Dataset manifest in {directory} is inconsistent")

    samples = []
    for index in range(count):
        window = file_handler.read_tensor(sample_file(directory, index))
        samples.append(SequenceSample(input=window[:spec.t_in], target=window[spec.t_in:],
                                      source=sources[index], start=starts[index]))
    frames = [file_handler.read_tensor(frames_file(directory, s)) for s in range(source_count)]
    logger.info(f"Loaded dataset with {count} samples from {directory}")
    dataset = Dataset(spec=spec, stats=stats, samples=samples, train_indices=splits[0],
                      val_indices=splits[1], test_indices=splits[2], frames=frames)
    if "frame_rows" in manifest:
        recorded = (int(manifest["frame_rows"]), int(manifest["frame_cols"]))
        if dataset.frame_shape != recorded:
            raise DatasetError(f"Dataset in {directory} holds {dataset.frame_shape} frames, manifest says {recorded}")
    return dataset, manifest

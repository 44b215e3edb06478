"""Shared fixtures and gradient-check helpers."""

import logging

import numpy as np
import pytest

from src.core.dataset import DatasetSpec, build_dataset_from_frames
from src.core.model import reference_config
from src.core.tensor import Rng

FD_EPSILON = 1e-5


def numeric_gradient(loss, x: np.ndarray, eps: float = FD_EPSILON) -> np.ndarray:
    """Central finite differences of a scalar loss() with respect to x (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        index = it.multi_index
        original = x[index]
        x[index] = original + eps
        plus = loss()
        x[index] = original - eps
        minus = loss()
        x[index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference relative to the larger gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def wave_frames(count: int = 40, channels: int = 2, height: int = 8, width: int = 8,
                phase_speed: float = 0.15) -> np.ndarray:
    """Travelling-wave frames (count, channels, height, width) resembling a shed wake."""
    t = np.arange(count)[:, None, None, None]
    c = np.arange(channels)[None, :, None, None]
    y = np.arange(height)[None, None, :, None] / height
    x = np.arange(width)[None, None, None, :] / width
    return np.sin(2.0 * np.pi * (x - phase_speed * t) + c) * np.cos(np.pi * (y - 0.5)) + 0.1 * c


@pytest.fixture(autouse=True)
def restore_root_logger():
    """setup_logging() replaces the root handlers; put the test runner's back afterwards."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_spec():
    return DatasetSpec(sources=[], crop=None, resize=None, channels=("u", "v"), t_in=3, t_out=1,
                       stride=1, split_seed=0)


@pytest.fixture
def tiny_dataset(tiny_spec):
    return build_dataset_from_frames([wave_frames()], tiny_spec)


@pytest.fixture
def tiny_config():
    """Improved variant small enough to train in a test."""
    return reference_config("improved", channels=2, t_in=3, t_out=1, stem_channels=4, se_reduction=2,
                            hidden_channels=(4,), epochs=2, batch_size=4, seed=3)

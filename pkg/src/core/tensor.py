"""
Tensor Module

This module provides the dense tensor primitives every other part of the engine
builds on: exact-shape elementwise math, mean reductions, index algebra and
seeded pseudo-random initialization.

Tensors are plain numpy arrays. The random stream comes from numpy's PCG64
generator, whose state update is the 128-bit linear congruential step

    state = state * 0x2360ed051fc65da44385df649fccf645 + increment  (mod 2**128)

followed by the XSL-RR output permutation, so a seed yields the same stream on
every platform.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

# Get the package logger
logger = logging.getLogger(__name__)

Tensor = np.ndarray

DEFAULT_DTYPE = np.float64

# Supported dtypes and their VTEN codes
DTYPE_CODES = {
    np.dtype(np.float64): 0,
    np.dtype(np.float32): 1,
}


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


def _sigmoid(x: Tensor) -> Tensor:
    # Split by sign so large negative inputs do not overflow exp()
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


UNARY_OPS = {
    'sigmoid': _sigmoid,
    'tanh': np.tanh,
    'relu': lambda x: np.maximum(x, 0.0),
}

BINARY_OPS = {
    'add': np.add,
    'sub': np.subtract,
    'mul': np.multiply,
}


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    return _sigmoid(np.asarray(x, dtype=np.result_type(x, np.float32)))


def check_same_shape(a: Tensor, b: Tensor, what: str = "operands") -> None:
    """
    Ensure two tensors have identical shapes.

    Args:
        a: First tensor
        b: Second tensor
        what: Description used in the error message

    Raises:
        ShapeError: If the shapes differ
    """
    if a.shape != b.shape:
        logger.error(f"Shape mismatch for {what}: {a.shape} vs {b.shape}")
        raise ShapeError(f"Shape mismatch for {what}: {a.shape} vs {b.shape}")


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Apply an elementwise operation.

    Binary operations require identical shapes; there is no broadcasting.
    'mul' is the Hadamard product.

    Args:
        op: One of add, sub, mul, sigmoid, tanh, relu
        a: First operand
        b: Second operand for binary operations

    Returns:
        New tensor with the shape of ``a``

    Raises:
        ShapeError: If binary operand shapes differ
        ValueError: If the operation is unknown or operands are missing
    """
    a = np.asarray(a)
    if op in BINARY_OPS:
        if b is None:
            raise ValueError(f"Operation '{op}' needs two operands")
        b = np.asarray(b)
        check_same_shape(a, b, f"elementwise '{op}'")
        return BINARY_OPS[op](a, b)

    if op in UNARY_OPS:
        if b is not None:
            raise ValueError(f"Operation '{op}' takes a single operand")
        return UNARY_OPS[op](np.asarray(a, dtype=np.result_type(a, np.float32)))

    raise ValueError(f"Unknown elementwise operation: {op}")


def reduce_mean(a: Tensor, axes: Iterable[int]) -> Tensor:
    """
    Arithmetic mean over a set of axes; the reduced axes are removed.

    numpy reduces with pairwise summation in a fixed order, so results do not
    depend on how the work is scheduled.

    Args:
        a: Input tensor
        axes: Axis indices to reduce (negative indices allowed)

    Returns:
        Reduced tensor (a 0-d array when every axis is reduced)

    Raises:
        ValueError: If an axis is out of range
    """
    a = np.asarray(a)
    normalized = set()
    for axis in axes:
        if not -a.ndim <= axis < a.ndim:
            logger.error(f"Axis {axis} out of range for shape {a.shape}")
            raise ValueError(f"Axis {axis} out of range for tensor of rank {a.ndim}")
        normalized.add(axis % a.ndim)

    if not normalized:
        return a.copy()
    return np.mean(a, axis=tuple(sorted(normalized)))


def flat_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major flat offset of a multi-index."""
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def multi_index(offset: int, shape: Sequence[int]) -> Tuple[int, ...]:
    """Multi-index of a row-major flat offset."""
    return tuple(int(i) for i in np.unravel_index(offset, tuple(shape)))


@dataclass
class Rng:
    """
    Seeded pseudo-random stream (PCG64).

    Attributes:
        seed: 64-bit unsigned seed
    """
    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"Seed must be a 64-bit unsigned integer, got {self.seed}")
        self.seed = int(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape: Sequence[int], low: float, high: float,
                dtype=DEFAULT_DTYPE) -> Tensor:
        return random_uniform(self, shape, low, high, dtype=dtype)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n)."""
        return self.generator.permutation(n)

    def spawn(self, offset: int) -> "Rng":
        """Independent stream derived deterministically from this seed."""
        return Rng((self.seed + 0x9E3779B97F4A7C15 * (offset + 1)) % (2 ** 64))


def random_uniform(rng: Rng, shape: Sequence[int], low: float, high: float,
                   dtype=DEFAULT_DTYPE) -> Tensor:
    """
    Draw a tensor of uniform values in [low, high).

    Args:
        rng: Random stream
        shape: Output shape
        low: Inclusive lower bound
        high: Exclusive upper bound
        dtype: Output dtype

    Returns:
        Tensor of the requested shape

    Raises:
        ValueError: If low >= high or no value of dtype lies in [low, high)
    """
    if not low < high:
        logger.error(f"random_uniform called with low={low} >= high={high}")
        raise ValueError(f"low must be < high (got low={low}, high={high})")

    dtype = np.dtype(dtype)
    # representable bounds of [low, high) in the output dtype
    floor = dtype.type(low)
    if float(floor) < low:
        floor = np.nextafter(floor, dtype.type(np.inf))
    ceiling = dtype.type(high)
    if float(ceiling) >= high:
        ceiling = np.nextafter(ceiling, dtype.type(-np.inf))
    if floor > ceiling:
        logger.error(f"random_uniform range [{low}, {high}) is empty in {dtype.name}")
        raise ValueError(f"[{low}, {high}) holds no {dtype.name} value")

    values = np.asarray(low + (high - low) * rng.generator.random(tuple(shape))).astype(dtype, copy=False)
    return np.clip(values, floor, ceiling)


def glorot_uniform(rng: Rng, shape: Sequence[int], fan_in: int, fan_out: int,
                   dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform initialization in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return random_uniform(rng, shape, -limit, limit, dtype=dtype)

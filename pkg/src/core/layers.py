"""
Layers Module

This module provides the differentiable building blocks of the forecasting
networks. Every layer exposes

    forward(x)                -> (y, cache)
    backward(cache, grad_y)   -> (grad_x, grads)

where ``grads`` maps parameter names (as in ``parameters()``) to gradients.
Inputs are single samples, channel first: (C, H, W) for 2D layers and
(C, T, H, W) for 3D layers. Convolutions are cross-correlations with stride 1
and zero "same" padding, so kernel sizes must be odd.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DEFAULT_DTYPE, Rng, ShapeError, glorot_uniform, sigmoid

# Get the package logger
logger = logging.getLogger(__name__)

Grads = Dict[str, np.ndarray]


# ----------------------------------------------------------------------
# Functional convolution
# ----------------------------------------------------------------------

def _kernel_shape(w: np.ndarray) -> Tuple[int, ...]:
    return tuple(w.shape[2:])


def _pad_same(x: np.ndarray, kernel: Sequence[int]) -> np.ndarray:
    return np.pad(x, [(0, 0)] + [(k // 2, k // 2) for k in kernel])


def _windows(x: np.ndarray, kernel: Sequence[int]) -> np.ndarray:
    """(C, *S) -> (C, *S, *K) sliding windows over the zero-padded input."""
    spatial_axes = tuple(range(1, 1 + len(kernel)))
    return sliding_window_view(_pad_same(x, kernel), tuple(kernel), axis=spatial_axes)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    N-d "same" cross-correlation.

    Args:
        x: Input (C_in, *S)
        w: Kernel (C_out, C_in, *K), odd K
        b: Bias (C_out,)

    Returns:
        Output (C_out, *S)
    """
    kernel = _kernel_shape(w)
    nd = len(kernel)
    if x.ndim != nd + 1:
        raise ShapeError(f"Expected input of rank {nd + 1}, got shape {x.shape}")
    if x.shape[0] != w.shape[1]:
        logger.error(f"Channel mismatch: input has {x.shape[0]} channels, kernel expects {w.shape[1]}")
        raise ShapeError(f"Channel mismatch: input has {x.shape[0]} channels, kernel expects {w.shape[1]}")

    windows = _windows(x, kernel)
    w_axes = [1] + list(range(2, 2 + nd))
    win_axes = [0] + list(range(1 + nd, 1 + 2 * nd))
    y = np.tensordot(w, windows, axes=(w_axes, win_axes))
    return y + b.reshape((-1,) + (1,) * nd)


def conv_backward(x: np.ndarray, w: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of conv_forward.

    Returns:
        Tuple of (grad_x, grad_w, grad_b)
    """
    kernel = _kernel_shape(w)
    nd = len(kernel)
    spatial = tuple(range(1, 1 + nd))

    windows = _windows(x, kernel)
    grad_w = np.tensordot(grad_y, windows, axes=(spatial, spatial))
    grad_b = grad_y.sum(axis=spatial)

    flipped = w[(slice(None), slice(None)) + (slice(None, None, -1),) * nd]
    grad_windows = _windows(grad_y, kernel)
    w_axes = [0] + list(range(2, 2 + nd))
    win_axes = [0] + list(range(1 + nd, 1 + 2 * nd))
    grad_x = np.tensordot(flipped, grad_windows, axes=(w_axes, win_axes))
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ----------------------------------------------------------------------
# Modules
# ----------------------------------------------------------------------

class Module:
    """
    Base class holding named parameters and child modules.

    Parameter names are dotted paths, e.g. ``res0.conv1.weight``.
    """

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.children: Dict[str, "Module"] = {}

    def parameters(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Ordered mapping of every parameter in this module and its children."""
        named = {f"{prefix}{name}": value for name, value in self.params.items()}
        for child_name, child in self.children.items():
            named.update(child.parameters(f"{prefix}{child_name}."))
        return named

    def load_parameters(self, values: Dict[str, np.ndarray], prefix: str = "") -> None:
        """
        Copy values into the parameters (shapes must match).

        Raises:
            KeyError: If a parameter is missing
            ShapeError: If a shape differs
        """
        for name, current in self.parameters(prefix).items():
            if name not in values:
                raise KeyError(f"Missing parameter: {name}")
            value = np.asarray(values[name])
            if value.shape != current.shape:
                raise ShapeError(f"Parameter {name} has shape {value.shape}, expected {current.shape}")
            current[...] = value

    def count_params(self) -> int:
        return int(sum(value.size for value in self.parameters().values()))

    @staticmethod
    def _prefixed(grads: Grads, prefix: str) -> Grads:
        return {f"{prefix}.{name}": value for name, value in grads.items()}


class ConvLayer(Module):
    """
    Stride-1 "same" convolution over 2 or 3 spatial axes.

    Attributes:
        params['weight']: (C_out, C_in, *K)
        params['bias']: (C_out,)
    """

    spatial_rank = 2

    def __init__(self, in_channels: int, out_channels: int, kernel_size: Union[int, Sequence[int]],
                 rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ValueError(f"Channel counts must be positive (got {in_channels} -> {out_channels})")
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size,) * self.spatial_rank
        kernel_size = tuple(int(k) for k in kernel_size)
        if len(kernel_size) != self.spatial_rank or any(k < 1 or k % 2 == 0 for k in kernel_size):
            raise ValueError(f"Kernel size must be {self.spatial_rank} odd positive ints, got {kernel_size}")

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        taps = int(np.prod(kernel_size))
        self.params["weight"] = glorot_uniform(rng, (out_channels, in_channels) + kernel_size,
                                               in_channels * taps, out_channels * taps, dtype=dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return conv_forward(x, self.params["weight"], self.params["bias"]), x

    def backward(self, cache: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
        grad_x, grad_w, grad_b = conv_backward(cache, self.params["weight"], grad_y)
        return grad_x, {"weight": grad_w, "bias": grad_b}


class Conv2DLayer(ConvLayer):
    """2D convolution on (C, H, W)."""
    spatial_rank = 2


class Conv3DLayer(ConvLayer):
    """3D convolution on (C, T, H, W) with kernel (k_t, k, k)."""
    spatial_rank = 3


def conv2d_forward(layer: Conv2DLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)[0]


def conv2d_backward(layer: Conv2DLayer, x: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_x, grad_w, grad_b)."""
    return conv_backward(x, layer.params["weight"], grad_out)


conv3d_forward = conv2d_forward
conv3d_backward = conv2d_backward


class DenseLayer(Module):
    """Fully connected layer y = W x + b on a vector."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.params["weight"] = glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype=dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if x.shape != (self.params["weight"].shape[1],):
            raise ShapeError(f"Dense layer expects shape {(self.params['weight'].shape[1],)}, got {x.shape}")
        return self.params["weight"] @ x + self.params["bias"], x

    def backward(self, cache: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
        return self.params["weight"].T @ grad_y, {"weight": np.outer(grad_y, cache), "bias": grad_y.copy()}


class SEBlock(Module):
    """
    Squeeze-and-excitation channel attention.

    squeeze:    z_c = mean of channel c over every non-channel axis
    excitation: s = sigmoid(W2 relu(W1 z + b1) + b2)
    scale:      out_c = s_c * x_c

    ``scale_override`` replaces s (test hook); gradients then stop at s.
    """

    def __init__(self, channels: int, reduction: int, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            logger.error(f"SE block: {channels} channels not divisible by reduction {reduction}")
            raise ValueError(f"Channel count {channels} is not divisible by reduction ratio {reduction}")
        self.channels = channels
        self.reduction = reduction
        self.scale_override: Optional[np.ndarray] = None
        self.children["fc1"] = DenseLayer(channels, channels // reduction, rng.spawn(0), dtype=dtype)
        self.children["fc2"] = DenseLayer(channels // reduction, channels, rng.spawn(1), dtype=dtype)

    def squeeze(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.channels:
            raise ShapeError(f"SE block expects {self.channels} channels, got shape {x.shape}")
        return x.reshape(self.channels, -1).mean(axis=1)

    def forward(self, x: np.ndarray):
        z = self.squeeze(x)
        a1, cache1 = self.children["fc1"].forward(z)
        h = relu(a1)
        a2, cache2 = self.children["fc2"].forward(h)
        s = sigmoid(a2) if self.scale_override is None else np.asarray(self.scale_override, dtype=x.dtype)
        broadcast = s.reshape((-1,) + (1,) * (x.ndim - 1))
        return x * broadcast, (x, a1, cache1, cache2, s)

    def backward(self, cache, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
        x, a1, cache1, cache2, s = cache
        broadcast = s.reshape((-1,) + (1,) * (x.ndim - 1))
        grad_x = grad_y * broadcast

        grads: Grads = {}
        if self.scale_override is None:
            grad_s = (grad_y * x).reshape(self.channels, -1).sum(axis=1)
            grad_a2 = grad_s * s * (1.0 - s)
            grad_h, fc2_grads = self.children["fc2"].backward(cache2, grad_a2)
            grad_a1 = grad_h * (a1 > 0)
            grad_z, fc1_grads = self.children["fc1"].backward(cache1, grad_a1)
            pooled = x[0].size
            grad_x = grad_x + (grad_z / pooled).reshape(broadcast.shape)
            grads.update(self._prefixed(fc1_grads, "fc1"))
            grads.update(self._prefixed(fc2_grads, "fc2"))
        else:
            for name, value in self.parameters().items():
                grads[name] = np.zeros_like(value)
        return grad_x, grads


def se_forward(block: SEBlock, x: np.ndarray) -> np.ndarray:
    return block.forward(x)[0]


def se_backward(block: SEBlock, x: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, Grads]:
    """Returns (grad_x, grads) of the block at input x."""
    _, cache = block.forward(x)
    return block.backward(cache, grad_out)


class ResidualBlock3D(Module):
    """
    Channel-preserving residual unit: y = relu(F(x) + x) with
    F = Conv3D -> ReLU -> Conv3D.
    """

    def __init__(self, channels: int, kernel_size: Union[int, Sequence[int]], rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.channels = channels
        self.children["conv1"] = Conv3DLayer(channels, channels, kernel_size, rng.spawn(0), dtype=dtype)
        self.children["conv2"] = Conv3DLayer(channels, channels, kernel_size, rng.spawn(1), dtype=dtype)

    def forward(self, x: np.ndarray):
        a, cache1 = self.children["conv1"].forward(x)
        h = relu(a)
        f, cache2 = self.children["conv2"].forward(h)
        if f.shape != x.shape:
            logger.error(f"Residual branch changed shape {x.shape} -> {f.shape}")
            raise ShapeError(f"Residual branch changed shape {x.shape} -> {f.shape}")
        pre = f + x
        return relu(pre), (a, cache1, cache2, pre)

    def backward(self, cache, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
        a, cache1, cache2, pre = cache
        grad_pre = grad_y * (pre > 0)
        grad_h, conv2_grads = self.children["conv2"].backward(cache2, grad_pre)
        grad_a = grad_h * (a > 0)
        grad_x, conv1_grads = self.children["conv1"].backward(cache1, grad_a)
        grads = self._prefixed(conv1_grads, "conv1")
        grads.update(self._prefixed(conv2_grads, "conv2"))
        # skip path passes the gradient through unchanged
        return grad_x + grad_pre, grads


def residual_forward(block: ResidualBlock3D, x: np.ndarray) -> np.ndarray:
    return block.forward(x)[0]


def residual_backward(block: ResidualBlock3D, x: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, Grads]:
    """Returns (grad_x, grads) keyed conv1.weight, conv1.bias, conv2.weight, conv2.bias."""
    _, cache = block.forward(x)
    return block.backward(cache, grad_out)

"""
ConvLSTM Module

This module provides the peephole convolutional LSTM cell and its unrolling over
a sequence, with exact backpropagation through time.

One step, with * a "same" convolution and o the Hadamard product:

    g_t = tanh(W_xg * X_t + W_hg * H_{t-1} + b_g)
    i_t = sigmoid(W_xi * X_t + W_hi * H_{t-1} + W_ci o C_{t-1} + b_i)
    f_t = sigmoid(W_xf * X_t + W_hf * H_{t-1} + W_cf o C_{t-1} + b_f)
    C_t = f_t o C_{t-1} + i_t o g_t
    o_t = sigmoid(W_xo * X_t + W_ho * H_{t-1} + W_co o C_t + b_o)
    H_t = o_t o tanh(C_t)

Peephole weights are per-channel vectors broadcast over the spatial axes.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .layers import Grads, Module, conv_backward, conv_forward
from .tensor import DEFAULT_DTYPE, Rng, ShapeError, glorot_uniform, sigmoid

# Get the package logger
logger = logging.getLogger(__name__)

GATES = ("g", "i", "f", "o")


def convlstm_param_count(in_channels: int, hidden_channels: int, kernel_size: int) -> int:
    """4 k^2 C_in C_h + 4 k^2 C_h^2 + 3 C_h (peepholes) + 4 C_h (biases)."""
    k2 = kernel_size * kernel_size
    return (4 * k2 * in_channels * hidden_channels + 4 * k2 * hidden_channels ** 2
            + 3 * hidden_channels + 4 * hidden_channels)


@dataclass
class ConvLSTMState:
    """Hidden and cell state, each (C_h, h, w)."""
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, channels: int, height: int, width: int, dtype=DEFAULT_DTYPE) -> "ConvLSTMState":
        return cls(np.zeros((channels, height, width), dtype=dtype),
                   np.zeros((channels, height, width), dtype=dtype))


class ConvLSTMLayer(Module):
    """
    Peephole ConvLSTM weights.

    Parameters are stored per gate (w_xg ... w_ho, w_ci/w_cf/w_co, b_g ... b_o)
    and stacked into one convolution over [X_t; H_{t-1}] when evaluated.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int, rng: Rng,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if in_channels < 1 or hidden_channels < 1:
            logger.error(f"ConvLSTM needs positive channel counts (got C_in={in_channels}, C_h={hidden_channels})")
            raise ValueError(f"ConvLSTM needs positive channel counts (got C_in={in_channels}, C_h={hidden_channels})")
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"ConvLSTM kernel size must be odd, got {kernel_size}")

        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        k2 = kernel_size * kernel_size
        for offset, gate in enumerate(GATES):
            self.params[f"w_x{gate}"] = glorot_uniform(
                rng.spawn(offset), (hidden_channels, in_channels, kernel_size, kernel_size),
                in_channels * k2, hidden_channels * k2, dtype=dtype)
            self.params[f"w_h{gate}"] = glorot_uniform(
                rng.spawn(offset + len(GATES)), (hidden_channels, hidden_channels, kernel_size, kernel_size),
                hidden_channels * k2, hidden_channels * k2, dtype=dtype)
        for gate in ("i", "f", "o"):
            self.params[f"w_c{gate}"] = np.zeros(hidden_channels, dtype=dtype)
        for gate in GATES:
            self.params[f"b_{gate}"] = np.zeros(hidden_channels, dtype=dtype)

    def stacked_kernel(self) -> Tuple[np.ndarray, np.ndarray]:
        """(4 C_h, C_in + C_h, k, k) kernel and (4 C_h,) bias in gate order g, i, f, o."""
        kernel = np.concatenate([
            np.concatenate([self.params[f"w_x{gate}"], self.params[f"w_h{gate}"]], axis=1)
            for gate in GATES
        ], axis=0)
        bias = np.concatenate([self.params[f"b_{gate}"] for gate in GATES])
        return kernel, bias

    def initial_state(self, height: int, width: int) -> ConvLSTMState:
        return ConvLSTMState.zeros(self.hidden_channels, height, width,
                                   dtype=self.params["b_g"].dtype)


def _peephole(weights: np.ndarray) -> np.ndarray:
    return weights[:, None, None]


def cell_forward(layer: ConvLSTMLayer, x_t: np.ndarray, state: ConvLSTMState):
    """
    One ConvLSTM step.

    Args:
        layer: Cell weights
        x_t: Input frame (C_in, h, w)
        state: Previous (H, C)

    Returns:
        Tuple of (new state, cache for cell_backward)

    Raises:
        ShapeError: If x_t does not match the layer or the state
    """
    c_h = layer.hidden_channels
    if x_t.ndim != 3 or x_t.shape[0] != layer.in_channels:
        raise ShapeError(f"ConvLSTM input must be ({layer.in_channels}, h, w), got {x_t.shape}")
    if state.h.shape != (c_h,) + x_t.shape[1:] or state.c.shape != state.h.shape:
        logger.error(f"ConvLSTM state {state.h.shape} does not match input {x_t.shape}")
        raise ShapeError(f"ConvLSTM state {state.h.shape} does not match input {x_t.shape}")

    kernel, bias = layer.stacked_kernel()
    xh = np.concatenate([x_t, state.h], axis=0)
    z = conv_forward(xh, kernel, bias)
    a_g, a_i, a_f, a_o = (z[k * c_h:(k + 1) * c_h] for k in range(4))

    p = layer.params
    c_prev = state.c
    g = np.tanh(a_g)
    i = sigmoid(a_i + _peephole(p["w_ci"]) * c_prev)
    f = sigmoid(a_f + _peephole(p["w_cf"]) * c_prev)
    c = f * c_prev + i * g
    # output gate looks at the new cell state
    o = sigmoid(a_o + _peephole(p["w_co"]) * c)
    tanh_c = np.tanh(c)
    h = o * tanh_c

    cache = (xh, c_prev, g, i, f, o, c, tanh_c)
    return ConvLSTMState(h, c), cache


def cell_backward(layer: ConvLSTMLayer, cache, grad_h: np.ndarray, grad_c: np.ndarray):
    """
    Backward pass of one step.

    Args:
        layer: Cell weights
        cache: Cache returned by cell_forward
        grad_h: dL/dH_t
        grad_c: dL/dC_t arriving from step t+1

    Returns:
        Tuple of (grad_x_t, grad_h_prev, grad_c_prev, grads)
    """
    xh, c_prev, g, i, f, o, c, tanh_c = cache
    p = layer.params
    spatial = (1, 2)

    grad_o = grad_h * tanh_c
    grad_a_o = grad_o * o * (1.0 - o)
    grad_c_total = grad_c + grad_h * o * (1.0 - tanh_c ** 2) + grad_a_o * _peephole(p["w_co"])

    grad_a_i = grad_c_total * g * i * (1.0 - i)
    grad_a_f = grad_c_total * c_prev * f * (1.0 - f)
    grad_a_g = grad_c_total * i * (1.0 - g ** 2)
    grad_c_prev = (grad_c_total * f + grad_a_i * _peephole(p["w_ci"])
                   + grad_a_f * _peephole(p["w_cf"]))

    kernel, _ = layer.stacked_kernel()
    grad_z = np.concatenate([grad_a_g, grad_a_i, grad_a_f, grad_a_o], axis=0)
    grad_xh, grad_kernel, grad_bias = conv_backward(xh, kernel, grad_z)

    c_in, c_h = layer.in_channels, layer.hidden_channels
    grads: Grads = {}
    for k, gate in enumerate(GATES):
        rows = slice(k * c_h, (k + 1) * c_h)
        grads[f"w_x{gate}"] = grad_kernel[rows, :c_in]
        grads[f"w_h{gate}"] = grad_kernel[rows, c_in:]
        grads[f"b_{gate}"] = grad_bias[rows]
    grads["w_ci"] = (grad_a_i * c_prev).sum(axis=spatial)
    grads["w_cf"] = (grad_a_f * c_prev).sum(axis=spatial)
    grads["w_co"] = (grad_a_o * c).sum(axis=spatial)

    return grad_xh[:c_in], grad_xh[c_in:], grad_c_prev, grads


def sequence_forward(layer: ConvLSTMLayer, xs: np.ndarray,
                     state: Optional[ConvLSTMState] = None) -> Tuple[np.ndarray, List]:
    """
    Unroll the cell over a sequence starting from zero state.

    Args:
        layer: Cell weights
        xs: Inputs (T, C_in, h, w)
        state: Optional initial state (zeros when omitted)

    Returns:
        Tuple of (hidden states (T, C_h, h, w), per-step caches)

    Raises:
        ValueError: If T is 0
    """
    if xs.ndim != 4:
        raise ShapeError(f"ConvLSTM sequence must be (T, C, h, w), got {xs.shape}")
    if xs.shape[0] == 0:
        logger.error("ConvLSTM sequence has no time steps")
        raise ValueError("ConvLSTM sequence needs at least one time step")

    if state is None:
        state = layer.initial_state(xs.shape[2], xs.shape[3])
    hs, caches = [], []
    for x_t in xs:
        state, cache = cell_forward(layer, x_t, state)
        hs.append(state.h)
        caches.append(cache)
    return np.stack(hs), caches


def sequence_backward(layer: ConvLSTMLayer, caches: List, grad_hs: np.ndarray) -> Tuple[np.ndarray, Grads]:
    """
    Backpropagation through time.

    Args:
        layer: Cell weights
        caches: Caches from sequence_forward
        grad_hs: dL/dH_t for every step (T, C_h, h, w)

    Returns:
        Tuple of (grad_xs (T, C_in, h, w), accumulated parameter grads)
    """
    grads: Grads = {name: np.zeros_like(value) for name, value in layer.params.items()}
    grad_h_next = np.zeros_like(grad_hs[0])
    grad_c_next = np.zeros_like(grad_hs[0])
    grad_xs = [None] * len(caches)

    for t in reversed(range(len(caches))):
        grad_x, grad_h_next, grad_c_next, step_grads = cell_backward(
            layer, caches[t], grad_hs[t] + grad_h_next, grad_c_next)
        grad_xs[t] = grad_x
        for name, value in step_grads.items():
            grads[name] += value

    return np.stack(grad_xs), grads


def count_params(layer: ConvLSTMLayer) -> int:
    return convlstm_param_count(layer.in_channels, layer.hidden_channels, layer.kernel_size)

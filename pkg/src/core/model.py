"""
Model Module

This module assembles the two forecasting networks compared by the engine:

    standard:  ConvLSTM -> ConvLSTM -> Conv3D head -> sigmoid
    improved:  Conv3D stem -> ResidualBlock3D x n -> SE block -> ConvLSTM -> Conv3D head -> sigmoid

Input and output windows are (T, C, h, w). The head maps hidden channels back to
the C physical channels and its last time slice is the next frame. Forecasts of
T_out frames decode one frame at a time, feeding each prediction back into the
window.
"""

import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .convlstm import ConvLSTMLayer, sequence_backward, sequence_forward
from .layers import Conv3DLayer, Grads, Module, ResidualBlock3D, SEBlock
from .tensor import Rng, ShapeError, sigmoid
from ..utils.converters import convert_value

# Get the package logger
logger = logging.getLogger(__name__)

VARIANTS = ("standard", "improved")
LOSSES = ("mse",)
DTYPES = {"float64": np.float64, "float32": np.float32}

TRAINING_KINDS = {
    "learning_rate": float, "beta1": float, "beta2": float, "epsilon": float,
    "batch_size": int, "epochs": int, "patience": int, "loss": str, "seed": int, "dtype": str,
}

MODEL_KINDS = dict(TRAINING_KINDS, **{
    "variant": str, "channels": int, "t_in": int, "t_out": int, "stem_channels": int,
    "residual_blocks": int, "residual_kernel": "int_tuple", "se_reduction": int,
    "hidden_channels": "int_tuple", "kernel_size": int, "head_kernel": "int_tuple",
})


@dataclass
class ModelConfig:
    """
    Architecture and training hyperparameters.

    Attributes:
        variant: 'standard' or 'improved'
        channels: Physical channels C
        t_in, t_out: Input and forecast frames
        stem_channels: Width of the improved front end
        residual_blocks: ResidualBlock3D count (improved only)
        residual_kernel: (k_t, k, k) of the residual convolutions
        se_reduction: SE reduction ratio r
        hidden_channels: ConvLSTM widths, one per stacked layer
        kernel_size: ConvLSTM kernel size
        head_kernel: (k_t, k, k) of the Conv3D head
        learning_rate, beta1, beta2, epsilon: Adam hyperparameters
        batch_size, epochs: Optimizer loop
        patience: Epochs without validation improvement before stopping (0 disables)
        loss: Loss name (only 'mse')
        seed: Initialization and shuffling seed
        dtype: 'float64' or 'float32'
    """
    variant: str = "improved"
    channels: int = 2
    t_in: int = 10
    t_out: int = 1
    stem_channels: int = 16
    residual_blocks: int = 1
    residual_kernel: Tuple[int, int, int] = (3, 3, 3)
    se_reduction: int = 4
    hidden_channels: Tuple[int, ...] = (24,)
    kernel_size: int = 3
    head_kernel: Tuple[int, int, int] = (3, 3, 3)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 50
    patience: int = 0
    loss: str = "mse"
    seed: int = 0
    dtype: str = "float64"

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]

    def validate(self) -> "ModelConfig":
        """
        Check the configuration.

        Raises:
            ValueError: Describing the first invalid field
        """
        if self.variant not in VARIANTS:
            raise ValueError(f"Unknown model variant '{self.variant}' (expected one of {', '.join(VARIANTS)})")
        if self.loss not in LOSSES:
            raise ValueError(f"Unsupported loss '{self.loss}'")
        if self.dtype not in DTYPES:
            raise ValueError(f"Unsupported dtype '{self.dtype}' (expected float64 or float32)")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.t_in < 1 or self.t_out < 1:
            raise ValueError("t_in and t_out must be positive")
        if not self.hidden_channels or min(self.hidden_channels) < 1:
            raise ValueError("hidden_channels needs at least one positive width")
        if self.variant == "improved":
            if self.residual_blocks < 1:
                raise ValueError("the improved variant needs at least one residual block")
            if self.stem_channels % self.se_reduction != 0:
                raise ValueError(f"stem_channels {self.stem_channels} not divisible by se_reduction {self.se_reduction}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.patience < 0:
            raise ValueError("learning_rate, batch_size, epochs and patience must be positive (epochs/patience may be 0)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ValueError("Adam betas must be in [0, 1) and epsilon positive")
        return self

    def to_mapping(self) -> Dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ModelConfig":
        """Build from already-converted values; unknown keys raise KeyError."""
        known = {item.name for item in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise KeyError(f"Unknown model keys: {', '.join(sorted(unknown))}")
        cfg = cls(**dict(values))
        for name in ("residual_kernel", "head_kernel", "hidden_channels"):
            value = getattr(cfg, name)
            setattr(cfg, name, (int(value),) if np.isscalar(value) else tuple(int(v) for v in value))
        return cfg.validate()

    @classmethod
    def from_manifest(cls, entries: Mapping[str, str]) -> "ModelConfig":
        """Rebuild a configuration from checkpoint manifest text."""
        values = {key: convert_value(entries[key], kind) for key, kind in MODEL_KINDS.items() if key in entries}
        return cls.from_mapping(values)


def reference_config(variant: str, channels: int = 2, t_in: int = 10, t_out: int = 1, **overrides) -> ModelConfig:
    """
    Reference configurations of the comparison study.

    standard: two stacked ConvLSTM layers of width 32.
    improved: 16-wide stem, one residual block, SE (r = 4), one ConvLSTM of width 24.
    """
    if variant == "standard":
        base = dict(variant="standard", hidden_channels=(32, 32), residual_blocks=0)
    elif variant == "improved":
        base = dict(variant="improved", stem_channels=16, residual_blocks=1, se_reduction=4,
                    hidden_channels=(24,))
    else:
        raise ValueError(f"Unknown model variant '{variant}'")
    base.update(channels=channels, t_in=t_in, t_out=t_out)
    base.update(overrides)
    return ModelConfig.from_mapping(base)


class ForecastModel(Module):
    """Network for one ModelConfig; parameters are exposed through Module.parameters()."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg.validate()
        rng = Rng(cfg.seed)
        dtype = cfg.numpy_dtype

        width = cfg.channels
        if cfg.variant == "improved":
            self.children["stem"] = Conv3DLayer(cfg.channels, cfg.stem_channels, cfg.residual_kernel,
                                                rng.spawn(0), dtype=dtype)
            for index in range(cfg.residual_blocks):
                self.children[f"res{index}"] = ResidualBlock3D(cfg.stem_channels, cfg.residual_kernel,
                                                               rng.spawn(10 + index), dtype=dtype)
            self.children["se"] = SEBlock(cfg.stem_channels, cfg.se_reduction, rng.spawn(1), dtype=dtype)
            width = cfg.stem_channels

        for index, hidden in enumerate(cfg.hidden_channels):
            self.children[f"lstm{index}"] = ConvLSTMLayer(width, hidden, cfg.kernel_size,
                                                          rng.spawn(100 + index), dtype=dtype)
            width = hidden
        self.children["head"] = Conv3DLayer(width, cfg.channels, cfg.head_kernel, rng.spawn(2), dtype=dtype)

        logger.debug(f"Built {cfg.variant} model with {self.count_params()} parameters")

    @property
    def front_end(self) -> List[str]:
        """Names of the (C, T, h, w) feature extractor stages, in order."""
        if self.config.variant != "improved":
            return []
        names = ["stem"] + [f"res{i}" for i in range(self.config.residual_blocks)]
        return names + ["se"]

    @property
    def recurrent(self) -> List[str]:
        return [f"lstm{i}" for i in range(len(self.config.hidden_channels))]

    def check_input(self, x: np.ndarray) -> None:
        cfg = self.config
        if x.ndim != 4 or x.shape[0] != cfg.t_in or x.shape[1] != cfg.channels:
            logger.error(f"Model input shape {x.shape} does not match (T_in={cfg.t_in}, C={cfg.channels}, h, w)")
            raise ShapeError(f"Model input must be ({cfg.t_in}, {cfg.channels}, h, w), got {x.shape}")

    def _step_forward(self, window: np.ndarray):
        """Next frame (C, h, w) after one (T_in, C, h, w) window."""
        caches: Dict[str, Any] = {}

        # front end works on (C, T, h, w)
        features = window.transpose(1, 0, 2, 3)
        for name in self.front_end:
            features, caches[name] = self.children[name].forward(features)
        sequence = features.transpose(1, 0, 2, 3)

        for name in self.recurrent:
            sequence, caches[name] = sequence_forward(self.children[name], sequence)

        head_out, caches["head"] = self.children["head"].forward(sequence.transpose(1, 0, 2, 3))
        frame = sigmoid(head_out[:, -1])
        return frame, (caches, frame, head_out.shape)

    def _step_backward(self, cache, grad_frame: np.ndarray) -> Tuple[np.ndarray, Grads]:
        caches, frame, head_shape = cache
        grads: Grads = {}

        grad_head = np.zeros(head_shape, dtype=np.result_type(grad_frame, frame))
        grad_head[:, -1] = grad_frame * frame * (1.0 - frame)
        grad_seq, head_grads = self.children["head"].backward(caches["head"], grad_head)
        grads.update(self._prefixed(head_grads, "head"))
        grad_seq = grad_seq.transpose(1, 0, 2, 3)

        for name in reversed(self.recurrent):
            grad_seq, layer_grads = sequence_backward(self.children[name], caches[name], grad_seq)
            grads.update(self._prefixed(layer_grads, name))

        grad_features = grad_seq.transpose(1, 0, 2, 3)
        for name in reversed(self.front_end):
            grad_features, stage_grads = self.children[name].backward(caches[name], grad_features)
            grads.update(self._prefixed(stage_grads, name))

        return grad_features.transpose(1, 0, 2, 3), grads

    def forward(self, x: np.ndarray):
        """
        Forecast from one input window.

        Each of the T_out frames is decoded from the previous window with the
        frame before it appended and the oldest frame dropped, so frame k + 1
        depends on the forecast of frame k.

        Args:
            x: Input window (T_in, C, h, w)

        Returns:
            Tuple of (forecast (T_out, C, h, w), cache)
        """
        self.check_input(x)
        window = np.asarray(x, dtype=self.config.numpy_dtype)
        frames, steps = [], []
        for _ in range(self.config.t_out):
            frame, step_cache = self._step_forward(window)
            frames.append(frame)
            steps.append(step_cache)
            window = np.concatenate([window[1:], frame[None]], axis=0)
        return np.stack(frames), steps

    def backward(self, cache, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
        """
        Gradients of a scalar loss with respect to the input and every parameter.

        Backpropagates through the decoding steps in reverse, routing the
        gradient of each fed-back frame into the step that produced it.

        Args:
            cache: Cache returned by forward
            grad_y: dL/dy (T_out, C, h, w)

        Returns:
            Tuple of (grad_x (T_in, C, h, w), grads keyed like parameters())
        """
        grads: Grads = {}
        # dL/d(window) of the step after the current one
        carry: Optional[np.ndarray] = None
        for k in reversed(range(len(cache))):
            grad_frame = grad_y[k] if carry is None else grad_y[k] + carry[-1]
            grad_window, step_grads = self._step_backward(cache[k], grad_frame)
            for name, value in step_grads.items():
                grads[name] = grads[name] + value if name in grads else value
            if carry is not None:
                grad_window[1:] += carry[:-1]
            carry = grad_window
        return carry, grads


def build_model(cfg: ModelConfig) -> ForecastModel:
    return ForecastModel(cfg)


def model_forward(model: ForecastModel, x: np.ndarray) -> np.ndarray:
    """Forecast (T_out, C, h, w) for an input window (T_in, C, h, w)."""
    return model.forward(x)[0]


def model_backward(model: ForecastModel, x: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, Grads]:
    """Forward then backward pass; returns (grad_x, grads)."""
    _, cache = model.forward(x)
    return model.backward(cache, grad_y)


def model_from_checkpoint(cfg: ModelConfig, params: Mapping[str, np.ndarray],
                          expected_names: Optional[List[str]] = None) -> ForecastModel:
    """
    Rebuild a model and load saved weights.

    Raises:
        KeyError: If a weight is missing
        ShapeError: If a weight has the wrong shape
    """
    model = ForecastModel(cfg)
    if expected_names is not None and list(expected_names) != list(model.parameters().keys()):
        raise KeyError("Checkpoint weight names do not match the model configuration")
    model.load_parameters(dict(params))
    return model

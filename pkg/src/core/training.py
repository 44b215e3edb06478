"""
Training Module

This module provides the optimizer loop, evaluation metrics, autoregressive
rollout and the standard-versus-improved comparison protocol.

Metrics on normalized data (dynamic range L = 1):
    MAE  = mean |Y - Y_hat|
    MSE  = mean (Y - Y_hat)^2
    SSIM = ((2 mu_x mu_y + c1)(2 s_xy + c2)) / ((mu_x^2 + mu_y^2 + c1)(s_x^2 + s_y^2 + c2))
           with global statistics per frame, c1 = (0.01 L)^2, c2 = (0.03 L)^2,
           averaged over frames and channels.
"""

import time
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, DatasetError, SequenceSample
from .model import ForecastModel, ModelConfig, build_model, model_forward
from .tensor import Rng, check_same_shape

# Get the package logger
logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0

COMPARISON_ROWS = ("Total params", "Trainable params", "Training time (min)", "MAE", "MSE", "SSIM")

Clock = Callable[[], float]


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ComparisonError(ValueError):
    """Raised when two runs cannot be compared."""


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------

@dataclass
class MetricTriple:
    mae: float
    mse: float
    ssim: float

    def as_dict(self) -> Dict[str, float]:
        return {"mae": self.mae, "mse": self.mse, "ssim": self.ssim}


def _frames(x: np.ndarray) -> np.ndarray:
    # a 1-D or 2-D tensor is a single frame; otherwise the last two axes span a frame
    if x.ndim <= 2:
        return x.reshape(1, -1)
    return x.reshape(-1, x.shape[-2] * x.shape[-1])


def ssim(y: np.ndarray, y_hat: np.ndarray, dynamic_range: float = DYNAMIC_RANGE) -> float:
    """Global-statistics SSIM averaged over frames."""
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    a = _frames(np.asarray(y, dtype=np.float64))
    b = _frames(np.asarray(y_hat, dtype=np.float64))
    mu_a = a.mean(axis=1)
    mu_b = b.mean(axis=1)
    da = a - mu_a[:, None]
    db = b - mu_b[:, None]
    var_a = (da * da).mean(axis=1)
    var_b = (db * db).mean(axis=1)
    cov = (da * db).mean(axis=1)
    numerator = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def metrics(y: np.ndarray, y_hat: np.ndarray) -> MetricTriple:
    """
    MAE, MSE and SSIM between truth and prediction.

    Raises:
        ShapeError: If the shapes differ
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    check_same_shape(y, y_hat, "metrics")
    diff = y - y_hat
    return MetricTriple(mae=float(np.mean(np.abs(diff))), mse=float(np.mean(diff * diff)), ssim=ssim(y, y_hat))


# ----------------------------------------------------------------------
# Optimizer
# ----------------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer updating parameters in place."""

    def __init__(self, params: Dict[str, np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in self.params.items():
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            value -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(value.dtype)


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------

@dataclass
class TrainReport:
    """
    Training history.

    Attributes:
        train_loss: Mean training MSE per epoch
        val_mae, val_mse, val_ssim: Validation metrics per epoch
        epoch_seconds: Wall-clock time per epoch
        seconds: Wall-clock training time
        param_count: Parameter count of the model
        best_epoch: 1-based epoch of the kept weights (0 when no epoch ran)
        stop_reason: 'completed', 'early_stopping' or 'no_epochs'
    """
    train_loss: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    val_ssim: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    seconds: float = 0.0
    param_count: int = 0
    best_epoch: int = 0
    stop_reason: str = "completed"

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def history_rows(self) -> List[Dict[str, float]]:
        """One row per epoch for the history CSV."""
        return [
            {"epoch": epoch + 1, "train_loss": self.train_loss[epoch], "val_mae": self.val_mae[epoch],
             "val_mse": self.val_mse[epoch], "val_ssim": self.val_ssim[epoch],
             "seconds": self.epoch_seconds[epoch]}
            for epoch in range(self.epochs_run)
        ]


def sample_gradients(model: ForecastModel, sample: SequenceSample) -> Tuple[float, Dict[str, np.ndarray]]:
    """MSE loss of one sample and its parameter gradients."""
    prediction, cache = model.forward(sample.input)
    diff = prediction - sample.target
    loss = float(np.mean(diff * diff))
    _, grads = model.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


def train(cfg: ModelConfig, dataset: Dataset, clock: Clock = time.perf_counter,
          model: Optional[ForecastModel] = None) -> Tuple[ForecastModel, TrainReport]:
    """
    Fit a model with Adam on the training split.

    Each epoch shuffles the training samples with a seed derived from cfg.seed,
    averages per-sample MSE gradients over each batch, and evaluates the
    validation split. The weights of the best validation-MSE epoch are kept.

    Args:
        cfg: Model configuration
        dataset: Dataset with non-empty train and validation splits
        clock: Time source for the reported training time
        model: Optional pre-built model (built from cfg otherwise)

    Returns:
        Tuple of (model holding the best weights, TrainReport)

    Raises:
        DatasetError: If the training or validation split is empty
        TrainingError: If a batch loss is not finite
    """
    cfg.validate()
    train_samples = dataset.train
    val_samples = dataset.val
    if not train_samples:
        logger.error("Training split is empty")
        raise DatasetError("Training split is empty")
    if not val_samples:
        logger.error("Validation split is empty")
        raise DatasetError("Validation split is empty")

    model = model if model is not None else build_model(cfg)
    params = model.parameters()
    optimizer = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    report = TrainReport(param_count=model.count_params())
    best_mse = np.inf
    best_params = {name: value.copy() for name, value in params.items()}
    stale_epochs = 0

    if cfg.epochs == 0:
        report.stop_reason = "no_epochs"

    started = clock()
    for epoch in range(1, cfg.epochs + 1):
        epoch_started = clock()
        order = Rng(cfg.seed).spawn(1000 + epoch).permutation(len(train_samples))
        batch_losses = []
        for batch_index, first in enumerate(range(0, len(order), cfg.batch_size), start=1):
            batch = [train_samples[i] for i in order[first:first + cfg.batch_size]]
            total = {name: np.zeros_like(value) for name, value in params.items()}
            losses = []
            for sample in batch:
                loss, grads = sample_gradients(model, sample)
                losses.append(loss)
                for name, grad in grads.items():
                    total[name] += grad
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                logger.error(f"Non-finite loss at epoch {epoch}, batch {batch_index}")
                raise TrainingError(f"Loss became {batch_loss} at epoch {epoch}, batch {batch_index}",
                                    epoch, batch_index)
            optimizer.step({name: grad / len(batch) for name, grad in total.items()})
            batch_losses.append(batch_loss)
            logger.debug(f"epoch {epoch} batch {batch_index}: loss {batch_loss:.6g}")

        val = evaluate(model, val_samples)
        report.train_loss.append(float(np.mean(batch_losses)))
        report.val_mae.append(val.mae)
        report.val_mse.append(val.mse)
        report.val_ssim.append(val.ssim)
        report.epoch_seconds.append(float(clock() - epoch_started))
        logger.info(f"Epoch {epoch}/{cfg.epochs}: train loss {report.train_loss[-1]:.6g}, "
                    f"val MSE {val.mse:.6g}, val SSIM {val.ssim:.4f}")

        if val.mse < best_mse:
            best_mse = val.mse
            report.best_epoch = epoch
            best_params = {name: value.copy() for name, value in params.items()}
            stale_epochs = 0
        else:
            stale_epochs += 1
            if cfg.patience and stale_epochs >= cfg.patience:
                report.stop_reason = "early_stopping"
                logger.info(f"Early stopping after epoch {epoch} (no improvement for {stale_epochs} epochs)")
                break

    report.seconds = float(clock() - started)
    model.load_parameters(best_params)
    logger.info(f"Training finished: {report.epochs_run} epochs, best epoch {report.best_epoch}, "
                f"{report.seconds:.1f}s")
    return model, report


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------

def predict(model: ForecastModel, samples: Sequence[SequenceSample]) -> np.ndarray:
    return np.stack([model_forward(model, sample.input) for sample in samples])


def evaluate(model: ForecastModel, samples: Sequence[SequenceSample]) -> MetricTriple:
    """
    Metrics of the model's forecasts over a split.

    Raises:
        DatasetError: If there are no samples
    """
    if not samples:
        raise DatasetError("Cannot evaluate an empty split")
    targets = np.stack([sample.target for sample in samples])
    return metrics(targets, predict(model, samples))


def persistence_forecast(window: np.ndarray, t_out: int) -> np.ndarray:
    """Repeat the last observed frame t_out times."""
    return np.repeat(window[-1:], t_out, axis=0)


def persistence_metrics(samples: Sequence[SequenceSample]) -> MetricTriple:
    """Metrics of the persistence baseline over a split."""
    if not samples:
        raise DatasetError("Cannot evaluate an empty split")
    targets = np.stack([sample.target for sample in samples])
    forecasts = np.stack([persistence_forecast(sample.input, sample.target.shape[0]) for sample in samples])
    return metrics(targets, forecasts)


def rollout(model: ForecastModel, seed_window: np.ndarray, horizon: int) -> np.ndarray:
    """
    Autoregressive forecast: each predicted frame is appended to the window
    and the oldest frame dropped.

    Args:
        model: Trained model
        seed_window: Observed frames (T_in, C, h, w)
        horizon: Frames to predict

    Returns:
        Predicted frames (horizon, C, h, w)

    Raises:
        ValueError: If horizon < 1
    """
    if horizon < 1:
        logger.error(f"Invalid rollout horizon {horizon}")
        raise ValueError(f"Rollout horizon must be at least 1, got {horizon}")

    window = np.asarray(seed_window)
    predicted = []
    for _ in range(horizon):
        frame = model_forward(model, window)[0]
        predicted.append(frame)
        window = np.concatenate([window[1:], frame[None]], axis=0)
    return np.stack(predicted)


def rollout_metrics(model: ForecastModel, frames: Sequence[np.ndarray], positions: Sequence[Tuple[int, int]],
                    horizon: int) -> List[MetricTriple]:
    """
    Metrics per lead time of rollouts seeded at frames[source][start:start + T_in].

    Positions without horizon frames of ground truth after the window are skipped.

    Args:
        model: Trained model
        frames: Normalized frame stack per source (N_s, C, h, w)
        positions: (source, start) pairs, e.g. the test windows
        horizon: Lead times to evaluate

    Returns:
        One MetricTriple per lead time 1..horizon

    Raises:
        ValueError: If no start has enough ground truth
    """
    t_in = model.config.t_in
    usable = [(src, s) for src, s in positions if s + t_in + horizon <= frames[src].shape[0]]
    if not usable:
        raise ValueError(f"No rollout start has {horizon} frames of ground truth")
    skipped = len(positions) - len(usable)
    if skipped:
        logger.debug(f"Skipped {skipped} rollout starts near the end of the frame stack")

    predictions = np.stack([rollout(model, frames[src][s:s + t_in], horizon) for src, s in usable])
    truths = np.stack([frames[src][s + t_in:s + t_in + horizon] for src, s in usable])
    return [metrics(truths[:, lead], predictions[:, lead]) for lead in range(horizon)]


# ----------------------------------------------------------------------
# Comparison
# ----------------------------------------------------------------------

@dataclass
class ComparisonRun:
    model: ForecastModel
    report: TrainReport
    test: MetricTriple


@dataclass
class ComparisonTable:
    """Rows of (metric, standard, improved, change_percent)."""
    rows: List[Tuple[str, float, float, float]]
    standard: Optional[ComparisonRun] = None
    improved: Optional[ComparisonRun] = None

    def records(self) -> List[Dict[str, float]]:
        return [{"metric": name, "standard": std, "improved": imp, "change_percent": change}
                for name, std, imp, change in self.rows]


def percent_change(standard: float, improved: float) -> float:
    if standard == improved:
        return 0.0
    if standard == 0:
        return float("inf") if improved > 0 else float("-inf")
    return 100.0 * (improved - standard) / abs(standard)


def compare(cfg_std: ModelConfig, cfg_imp: ModelConfig, dataset: Dataset,
            clock: Clock = time.perf_counter) -> ComparisonTable:
    """
    Train both configurations on the same dataset and tabulate the comparison.

    Identical configurations are trained once, so a self-comparison reports
    zero change in every row whatever the clock.

    Raises:
        ComparisonError: If the configurations disagree with each other or the dataset
    """
    spec = dataset.spec
    for cfg in (cfg_std, cfg_imp):
        if (cfg.t_in, cfg.t_out, cfg.channels) != (spec.t_in, spec.t_out, len(spec.channels)):
            logger.error(f"{cfg.variant} config does not match the dataset windows")
            raise ComparisonError(
                f"{cfg.variant} config expects T_in={cfg.t_in}, T_out={cfg.t_out}, C={cfg.channels}; dataset has "
                f"T_in={spec.t_in}, T_out={spec.t_out}, C={len(spec.channels)}")
    if cfg_std.seed != cfg_imp.seed:
        raise ComparisonError(f"Runs use different seeds ({cfg_std.seed} vs {cfg_imp.seed})")

    runs = []
    for cfg in (cfg_std, cfg_imp):
        if runs and cfg == cfg_std:
            # identical configurations share one run
            logger.info("Both configurations are identical; reusing the standard run")
            runs.append(runs[0])
            continue
        logger.info(f"Training {cfg.variant} model for comparison")
        model, report = train(cfg, dataset, clock=clock)
        runs.append(ComparisonRun(model=model, report=report, test=evaluate(model, dataset.test)))

    values = [
        [run.report.param_count, run.model.count_params(), run.report.seconds / 60.0,
         run.test.mae, run.test.mse, run.test.ssim]
        for run in runs
    ]
    rows = [(name, float(std), float(imp), percent_change(std, imp))
            for name, std, imp in zip(COMPARISON_ROWS, values[0], values[1])]
    return ComparisonTable(rows=rows, standard=runs[0], improved=runs[1])

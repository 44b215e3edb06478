"""
Command implementations.

Each command takes the parsed arguments and the run configuration, writes its
artifacts together with a manifest (config hash and seed included) and returns
an exit code. Exceptions are mapped to exit codes by src.cli.main.
"""

import os
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import file_handler
from ..core.dataset import build_dataset, load_dataset, save_dataset
from ..core.file_handler import ArtifactError, FileHandler
from ..core.model import ModelConfig, model_from_checkpoint
from ..core.solver import NoSheddingError, run_simulation, strouhal
from ..core.training import (compare, evaluate, persistence_metrics, rollout, rollout_metrics, train)
from ..utils.exporters import ResultExporter, render_field, render_triptych
from ..utils.formatters import format_count, format_duration, format_file_size, format_metric, format_percent
from ..utils.logger import log_execution_time
from ..utils.validators import (is_valid_directory, is_valid_positive_int, is_valid_render_field,
                                is_valid_tensor_file, validate_channel_names, validate_output_directory)
from .config import RunConfig
from .parser import EXIT_OK, EXIT_RUNTIME, BadFlagError

# Get the package logger
logger = logging.getLogger(__name__)

HISTORY_NAME = "history.csv"
METRICS_NAME = "metrics.txt"
HORIZON_NAME = "horizon_metrics.csv"
COMPARISON_CSV = "comparison.csv"
COMPARISON_TXT = "comparison.txt"


def run_entries(cfg: RunConfig, seed: int, **extra: Any) -> Dict[str, Any]:
    """Manifest entries every command records."""
    entries: Dict[str, Any] = {"config_file": cfg.path or "", "config_hash": cfg.config_hash, "seed": seed}
    entries.update(extra)
    return entries


def require_artifact(directory: str, what: str) -> str:
    """
    Check that an upstream artifact directory has a manifest.

    Raises:
        ArtifactError: Naming the expected path
    """
    manifest = os.path.join(directory, file_handler.MANIFEST_NAME)
    if not os.path.isfile(manifest):
        logger.error(f"Missing {what}: expected {manifest}")
        raise ArtifactError(f"Missing {what}: expected {manifest}")
    return directory


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

@log_execution_time()
def cmd_simulate(args, cfg: RunConfig) -> int:
    """Run the solver; write snapshots, forces.csv and a Strouhal summary."""
    solver_cfg = cfg.solver
    out = FileHandler(force=args.force).prepare_output_directory(args.out or cfg.default_path("snapshots"))
    writer = file_handler.SnapshotWriter(out)
    records: List = []
    run_simulation(solver_cfg, on_snapshot=writer.write, on_forces=records.append)

    exporter = ResultExporter()
    if not exporter.export_forces(records, os.path.join(out, file_handler.FORCES_NAME)):
        return EXIT_RUNTIME

    settled = records[int(solver_cfg.transient_fraction * len(records)):]
    mean_drag = float(np.mean([record.drag[0] for record in settled])) if settled else float("nan")
    try:
        st: Optional[float] = strouhal(records, solver_cfg)
    except NoSheddingError as e:
        logger.warning(f"Strouhal number unavailable: {e}")
        st = None

    writer.close(solver_cfg.to_mapping(), extra=run_entries(
        cfg, cfg.seed if args.seed is None else args.seed,
        reynolds_number=solver_cfg.reynolds_number, strouhal=st, mean_drag=mean_drag))

    print(f"Snapshots: {writer.count} in {out}")
    print(f"St = {format_metric(st) if st is not None else 'no shedding detected'}")
    print(f"mean C_D = {format_metric(mean_drag)}")
    return EXIT_OK


# ----------------------------------------------------------------------
# dataset
# ----------------------------------------------------------------------

@log_execution_time()
def cmd_dataset(args, cfg: RunConfig) -> int:
    """Build and save the windowed dataset."""
    spec = cfg.dataset
    if args.source:
        spec.sources = [os.path.abspath(source) for source in args.source]
    if args.seed is not None:
        spec.split_seed = args.seed
    for source in spec.sources:
        require_artifact(source, "snapshot directory")

    out = args.out or cfg.default_path("dataset")
    FileHandler(force=args.force).prepare_output_directory(out)
    dataset = build_dataset(spec)
    save_dataset(dataset, out, extra=run_entries(cfg, spec.split_seed))

    print(f"Samples: {len(dataset.samples)} (train {len(dataset.train_indices)}, "
          f"val {len(dataset.val_indices)}, test {len(dataset.test_indices)}) in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# train / eval
# ----------------------------------------------------------------------

def _model_config(args, cfg: RunConfig) -> ModelConfig:
    model_cfg = cfg.model_config(getattr(args, "variant", None))
    if args.seed is not None:
        model_cfg.seed = args.seed
    return model_cfg


def _load_dataset(args, cfg: RunConfig):
    directory = args.dataset or cfg.default_path("dataset")
    require_artifact(directory, "dataset")
    dataset, manifest = load_dataset(directory)
    return directory, dataset, manifest


@log_execution_time()
def cmd_train(args, cfg: RunConfig) -> int:
    """Train one variant and save the best-validation checkpoint with its history."""
    model_cfg = _model_config(args, cfg)
    dataset_dir, dataset, dataset_manifest = _load_dataset(args, cfg)
    out = args.out or cfg.default_path(f"checkpoint_{model_cfg.variant}")
    # checked before training; the checkpoint itself is written atomically afterwards
    valid, message = validate_output_directory(out, force=args.force)
    if not valid:
        logger.error(message)
        raise FileExistsError(message)

    files = FileHandler(force=args.force)
    model, report = train(model_cfg, dataset)
    best = max(report.best_epoch - 1, 0)
    entries = dict(model_cfg.to_mapping())
    entries.update(run_entries(
        cfg, model_cfg.seed, dataset=os.path.abspath(dataset_dir),
        dataset_config_hash=dataset_manifest.get("config_hash", ""),
        dataset_manifest_sha256=files.get_file_hash(os.path.join(dataset_dir, file_handler.MANIFEST_NAME)),
        param_count=report.param_count, epochs_run=report.epochs_run, best_epoch=report.best_epoch,
        stop_reason=report.stop_reason,
        val_mae=report.val_mae[best] if report.val_mae else None,
        val_mse=report.val_mse[best] if report.val_mse else None,
        val_ssim=report.val_ssim[best] if report.val_ssim else None))
    files.save_checkpoint(out, model.parameters(), entries)
    if not ResultExporter().export_history(report, os.path.join(out, HISTORY_NAME)):
        return EXIT_RUNTIME

    print(f"{model_cfg.variant} model: {format_count(report.param_count)} parameters, "
          f"{report.epochs_run} epochs ({report.stop_reason}), best epoch {report.best_epoch}, "
          f"{format_duration(report.seconds)}")
    weight_bytes = sum(file_handler.tensor_file_size(value) for value in model.parameters().values())
    print(f"Checkpoint: {out} ({format_file_size(weight_bytes)} of weights)")
    return EXIT_OK


def load_model(directory: str):
    """Rebuild a model from a checkpoint directory."""
    require_artifact(directory, "checkpoint")
    manifest, params = FileHandler().load_checkpoint(directory)
    model_cfg = ModelConfig.from_manifest(manifest)
    return model_from_checkpoint(model_cfg, params, expected_names=list(params.keys())), manifest


@log_execution_time()
def cmd_eval(args, cfg: RunConfig) -> int:
    """Test metrics, persistence baseline, per-horizon rollout metrics and a sample rollout."""
    if not is_valid_positive_int(args.horizon):
        raise BadFlagError(f"--horizon must be at least 1, got {args.horizon}")
    variant = args.variant or cfg.model_config().variant
    checkpoint = args.checkpoint or cfg.default_path(f"checkpoint_{variant}")
    model, checkpoint_manifest = load_model(checkpoint)
    _, dataset, _ = _load_dataset(args, cfg)
    if model.config.t_in != dataset.spec.t_in or model.config.channels != len(dataset.spec.channels):
        logger.error("Checkpoint and dataset disagree on the window shape")
        raise ValueError("Checkpoint and dataset disagree on the window shape")

    files = FileHandler(force=args.force)
    out = files.prepare_output_directory(args.out or cfg.default_path(f"eval_{model.config.variant}"))
    test = dataset.test
    model_metrics = evaluate(model, test)
    baseline = persistence_metrics(test)
    positions = sorted((sample.source, sample.start) for sample in test)
    horizon = rollout_metrics(model, dataset.frames, positions, args.horizon)

    exporter = ResultExporter()
    rows = [{"predictor": "model", **model_metrics.as_dict()},
            {"predictor": "persistence", **baseline.as_dict()}]
    ok = exporter.export_to_text(rows, os.path.join(out, METRICS_NAME), title="Test metrics (normalized units)")
    ok = exporter.export_horizon_metrics(horizon, os.path.join(out, HORIZON_NAME)) and ok

    t_in = model.config.t_in
    rollout_start: Tuple[Optional[int], Optional[int]] = (None, None)
    for source, start in positions:
        frames = dataset.frames[source]
        if start + t_in + args.horizon <= frames.shape[0]:
            file_handler.write_tensor(os.path.join(out, "predictions.vten"),
                                      rollout(model, frames[start:start + t_in], args.horizon))
            file_handler.write_tensor(os.path.join(out, "truth.vten"),
                                      frames[start + t_in:start + t_in + args.horizon])
            rollout_start = (source, start)
            break

    files.write_manifest(out, run_entries(
        cfg, model.config.seed, checkpoint=os.path.abspath(checkpoint), variant=model.config.variant,
        horizon=args.horizon, rollout_source=rollout_start[0], rollout_start=rollout_start[1],
        checkpoint_config_hash=checkpoint_manifest.get("config_hash", ""),
        test_mae=model_metrics.mae, test_mse=model_metrics.mse, test_ssim=model_metrics.ssim,
        persistence_mse=baseline.mse, persistence_ssim=baseline.ssim), title="evaluation")

    print(f"model:       MAE {format_metric(model_metrics.mae)}  MSE {format_metric(model_metrics.mse)}  "
          f"SSIM {format_metric(model_metrics.ssim)}")
    print(f"persistence: MAE {format_metric(baseline.mae)}  MSE {format_metric(baseline.mse)}  "
          f"SSIM {format_metric(baseline.ssim)}")
    for lead, triple in enumerate(horizon, start=1):
        print(f"horizon {lead}: SSIM {format_metric(triple.ssim)}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ----------------------------------------------------------------------
# compare
# ----------------------------------------------------------------------

def comparison_text_formatters():
    def value(v):
        return format_metric(float(v))
    return {"standard": value, "improved": value, "change_percent": lambda v: format_percent(float(v))}


@log_execution_time()
def cmd_compare(args, cfg: RunConfig) -> int:
    """Train the standard and improved variants on one dataset and write the comparison table."""
    cfg_std, cfg_imp = cfg.comparison_configs()
    if args.seed is not None:
        cfg_std.seed = cfg_imp.seed = args.seed
    _, dataset, _ = _load_dataset(args, cfg)
    files = FileHandler(force=args.force)
    out = files.prepare_output_directory(args.out or cfg.default_path("compare"))

    table = compare(cfg_std, cfg_imp, dataset)
    exporter = ResultExporter()
    records = table.records()
    ok = exporter.export_to_csv(records, os.path.join(out, COMPARISON_CSV),
                                columns=["metric", "standard", "improved", "change_percent"])
    ok = exporter.export_to_text(records, os.path.join(out, COMPARISON_TXT),
                                 title="Standard vs improved ConvLSTM",
                                 formatters=comparison_text_formatters()) and ok
    files.write_manifest(out, run_entries(
        cfg, cfg_std.seed, standard_config=_describe(cfg_std), improved_config=_describe(cfg_imp)),
        title="comparison")

    for name, std, imp, change in table.rows:
        print(f"{name:<20} {format_metric(std):>12} {format_metric(imp):>12} {format_percent(change):>9}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _describe(model_cfg: ModelConfig) -> str:
    return "; ".join(f"{key}={value}" for key, value in model_cfg.to_mapping().items())


# ----------------------------------------------------------------------
# render
# ----------------------------------------------------------------------

def _select_field(stack: np.ndarray, names: Sequence[str], field_name: str) -> np.ndarray:
    """Pick a field from (..., C, h, w) data; 'mag' combines u and v."""
    if field_name == "mag":
        if "u" not in names or "v" not in names:
            raise BadFlagError("--field mag needs u and v channels")
        u = stack[..., names.index("u"), :, :]
        v = stack[..., names.index("v"), :, :]
        return np.sqrt(u * u + v * v)
    if field_name not in names:
        raise BadFlagError(f"Field '{field_name}' is not among the channels {', '.join(names)}")
    return stack[..., names.index(field_name), :, :]


def _snapshot_frames(directory: str, frame: Optional[int], field_name: str) -> List[Tuple[int, np.ndarray]]:
    manifest = file_handler.read_manifest(require_artifact(directory, "snapshot directory"))
    count = int(manifest.get("snapshot_count", "0"))
    index = count - 1 if frame is None else frame
    if not 0 <= index < count:
        raise BadFlagError(f"--frame {index} out of range (0..{count - 1})")
    names = ["u", "v"] if field_name == "mag" else [field_name]
    stack = np.stack([file_handler.read_tensor(file_handler.snapshot_file(directory, index, name))
                      for name in names])
    return [(index, _select_field(stack, names, field_name))]


def _tensor_frames(path: str, names: Sequence[str], frame: Optional[int], field_name: str) -> List[Tuple[int, np.ndarray]]:
    if not is_valid_tensor_file(path):
        logger.error(f"Missing or invalid tensor file: {path}")
        raise ArtifactError(f"Missing or invalid tensor file: {path}")
    data = file_handler.read_tensor(path)
    if data.ndim == 2:
        return [(0, data)]
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[1] != len(names):
        raise BadFlagError(f"Tensor {data.shape} does not match --channel-names {','.join(names)}")
    fields = _select_field(data, list(names), field_name)
    indices = range(fields.shape[0]) if frame is None else [frame]
    if any(not 0 <= k < fields.shape[0] for k in indices):
        raise BadFlagError(f"--frame {frame} out of range (0..{fields.shape[0] - 1})")
    return [(k, fields[k]) for k in indices]


@log_execution_time()
def cmd_render(args, cfg: RunConfig) -> int:
    """Render a snapshot directory or tensor file to PGM (and PPM) images plus a manifest."""
    if not is_valid_render_field(args.field):
        raise BadFlagError(f"Unknown field '{args.field}' (expected u, v, p or mag)")
    names = [name.strip() for name in args.channel_names.split(",") if name.strip()]
    valid, message = validate_channel_names(names)
    if not valid:
        raise BadFlagError(message)

    if is_valid_directory(args.input):
        frames = _snapshot_frames(args.input, args.frame, args.field)
    else:
        frames = _tensor_frames(args.input, names, args.frame, args.field)
    truths = None
    if args.truth:
        truths = dict(_tensor_frames(args.truth, names, args.frame, args.field))

    out = args.out or cfg.default_path("render")
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(os.path.normpath(args.input)))[0]
    written: List[str] = []
    for index, field in frames:
        base = os.path.join(out, f"{stem}_{args.field}_{index:04d}")
        if truths is not None:
            if index not in truths:
                raise BadFlagError(f"--truth has no frame {index}")
            written += render_triptych(truths[index], field, base, color=args.color)
        else:
            written += render_field(field, base, color=args.color)

    FileHandler().write_manifest(out, run_entries(
        cfg, cfg.seed if args.seed is None else args.seed, input=os.path.abspath(args.input),
        truth=os.path.abspath(args.truth) if args.truth else None, field=args.field, color=args.color,
        images=[os.path.basename(path) for path in written]), title="field images")
    for path in written:
        print(path)
    return EXIT_OK

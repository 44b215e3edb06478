import os

import numpy as np
import pandas as pd
import pytest

from src.cli import main
from src.cli.parser import (EXIT_BAD_FLAG, EXIT_CONFIG, EXIT_MISSING_ARTIFACT, EXIT_OK, EXIT_OVERWRITE,
                            build_parser)
from src.core.file_handler import MANIFEST_NAME, load_checkpoint, read_manifest, read_tensor
from src.utils.exporters import read_pgm

TINY_RUN = """
[run]
output_dir = runs
log_dir = logs

[solver]
nx = 32
ny = 16
domain_width = 0.08
domain_height = 0.04
cylinders = 0.02:0.02:0.008
dynamic_viscosity = 1e-4
dt = 0.001
n_steps = 60
sample_interval = 0.002

[dataset]
crop = 0, 0, 16, 32
resize = 8, 16
t_in = 3
t_out = 1

[model]
stem_channels = 4
se_reduction = 2
hidden_channels = 4
epochs = 1
batch_size = 8

[compare.standard]
hidden_channels = 4, 4

[compare.improved]
stem_channels = 4
se_reduction = 2
hidden_channels = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A config file plus the simulate and dataset artifacts built from it."""
    root = tmp_path_factory.mktemp("run")
    config = root / "tiny.cfg"
    config.write_text(TINY_RUN)
    assert main(["simulate", "--config", str(config)]) == EXIT_OK
    assert main(["dataset", "--config", str(config)]) == EXIT_OK
    return root, str(config)


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ("simulate", "dataset", "train", "eval", "compare"):
        assert parser.parse_args([command]).command == command
    args = parser.parse_args(["render", "x.vten", "--field", "mag", "--color"])
    assert (args.input, args.field, args.color) == ("x.vten", "mag", True)


def test_missing_config_exits_with_config_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG
    captured = capsys.readouterr()
    assert "absent.cfg" in captured.err
    assert captured.out == ""


def test_invalid_config_exits_with_config_code(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("[solver]\nmesh = fine\n")
    assert main(["simulate", "--config", str(config)]) == EXIT_CONFIG
    captured = capsys.readouterr()
    assert "mesh" in captured.err
    assert captured.out == ""


def test_unknown_flag_exits_with_flag_code(capsys):
    assert main(["simulate", "--bogus"]) == EXIT_BAD_FLAG
    captured = capsys.readouterr()
    assert "error" in captured.err
    assert captured.out == ""


def test_unknown_command_and_negative_seed(capsys):
    assert main(["fly"]) == EXIT_BAD_FLAG
    assert "error" in capsys.readouterr().err
    assert main(["train", "--seed", "-3"]) == EXIT_BAD_FLAG
    captured = capsys.readouterr()
    assert "--seed" in captured.err
    assert captured.out == ""


def test_unknown_render_field(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("[run]\nlog_dir = logs\n")
    assert main(["render", str(tmp_path), "--field", "vorticity", "--config", str(config)]) == EXIT_BAD_FLAG


def test_existing_output_needs_force(tmp_path):
    config = tmp_path / "tiny.cfg"
    config.write_text(TINY_RUN)
    out = tmp_path / "taken"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OVERWRITE
    assert os.listdir(out) == ["keep.txt"]


def test_missing_dataset_exits_with_artifact_code(tmp_path):
    config = tmp_path / "tiny.cfg"
    config.write_text(TINY_RUN)
    assert main(["train", "--config", str(config)]) == EXIT_MISSING_ARTIFACT
    assert main(["eval", "--config", str(config)]) == EXIT_MISSING_ARTIFACT


def test_simulate_writes_snapshots_and_forces(workspace):
    root, _ = workspace
    snapshots = root / "runs" / "snapshots"
    manifest = read_manifest(str(snapshots))
    assert manifest["snapshot_count"] == "30"
    assert len(manifest["config_hash"]) == 64
    forces = pd.read_csv(snapshots / "forces.csv")
    assert len(forces) == 60
    assert (root / "logs" / "wake_forecast.log").is_file()


def test_dataset_manifest_records_split(workspace):
    root, _ = workspace
    manifest = read_manifest(str(root / "runs" / "dataset"))
    assert manifest["seed"] == "0"
    assert manifest["t_in"] == "3"


def test_train_eval_render(workspace, capsys):
    root, config = workspace
    assert main(["train", "--config", config]) == EXIT_OK
    checkpoint = root / "runs" / "checkpoint_improved"
    assert (checkpoint / "history.csv").is_file()
    assert read_manifest(str(checkpoint))["variant"] == "improved"
    assert main(["train", "--config", config]) == EXIT_OVERWRITE
    assert "parameters" in capsys.readouterr().out

    assert main(["eval", "--config", config, "--horizon", "2"]) == EXIT_OK
    evaluation = root / "runs" / "eval_improved"
    horizon = pd.read_csv(evaluation / "horizon_metrics.csv")
    assert horizon["horizon"].tolist() == [1, 2]
    assert "persistence" in (evaluation / "metrics.txt").read_text()
    predictions = read_tensor(str(evaluation / "predictions.vten"))
    assert predictions.shape == (2, 2, 8, 16)
    assert read_tensor(str(evaluation / "truth.vten")).shape == predictions.shape
    assert main(["eval", "--config", config, "--horizon", "0", "--force"]) == EXIT_BAD_FLAG

    out = root / "images"
    assert main(["render", str(evaluation / "predictions.vten"), "--truth", str(evaluation / "truth.vten"),
                 "--config", config, "--out", str(out), "--color"]) == EXIT_OK
    assert sorted(os.listdir(out)) == [MANIFEST_NAME, "predictions_v_0000.pgm", "predictions_v_0000.ppm",
                                       "predictions_v_0001.pgm", "predictions_v_0001.ppm"]
    render_manifest = read_manifest(str(out))
    assert render_manifest["config_hash"] == read_manifest(str(evaluation))["config_hash"]
    assert len(render_manifest["config_hash"]) == 64
    assert render_manifest["seed"] == "0"
    assert render_manifest["images"].split(", ")[0] == "predictions_v_0000.pgm"
    assert read_pgm(str(out / "predictions_v_0000.pgm")).shape == (8, 3 * 16 + 4)

    assert main(["render", str(root / "runs" / "snapshots"), "--field", "mag", "--config", config,
                 "--out", str(out), "--seed", "5"]) == EXIT_OK
    assert read_pgm(str(out / "snapshots_mag_0029.pgm")).shape == (16, 32)
    render_manifest = read_manifest(str(out))
    assert (render_manifest["field"], render_manifest["seed"]) == ("mag", "5")


def test_seeded_training_is_reproducible(workspace):
    root, config = workspace
    outs = [str(root / f"seeded_{k}") for k in range(2)]
    for out in outs:
        assert main(["train", "--config", config, "--seed", "7", "--out", out]) == EXIT_OK
    (manifest_a, params_a), (manifest_b, params_b) = load_checkpoint(outs[0]), load_checkpoint(outs[1])
    assert manifest_a["seed"] == manifest_b["seed"] == "7"
    assert list(params_a) == list(params_b)
    for name, value in params_a.items():
        assert np.array_equal(value, params_b[name])


def test_compare_writes_table(workspace):
    root, config = workspace
    assert main(["compare", "--config", config]) == EXIT_OK
    table = pd.read_csv(root / "runs" / "compare" / "comparison.csv")
    assert table["metric"].tolist() == ["Total params", "Trainable params", "Training time (min)",
                                        "MAE", "MSE", "SSIM"]
    assert os.path.isfile(root / "runs" / "compare" / MANIFEST_NAME)
    assert "Standard vs improved" in (root / "runs" / "compare" / "comparison.txt").read_text()

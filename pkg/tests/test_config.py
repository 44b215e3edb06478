import hashlib
import os

import pytest

from src.cli.config import ConfigError, load_run_config, parse_run_config
from src.core.solver import SolverConfig


def test_empty_config_gives_reference_run(tmp_path):
    cfg = parse_run_config("", base_dir=str(tmp_path))
    assert cfg.config_hash == hashlib.sha256(b"").hexdigest()
    assert cfg.solver == SolverConfig()
    assert cfg.output_dir == os.path.join(str(tmp_path), "runs")
    assert cfg.dataset.sources == [os.path.join(str(tmp_path), "runs", "snapshots")]
    model = cfg.model_config()
    assert model.variant == "improved"
    assert (model.t_in, model.channels) == (10, 2)


def test_sections_and_relative_paths(tmp_path):
    text = """
[run]
output_dir = out
seed = 9

[solver]
nx = 64
ny = 32
cylinders = 0.08:0.08:0.01; 0.11:0.08:0.01

[dataset]
sources = a, b
channels = u, v, p
t_in = 4
crop = none

[model]
variant = standard
epochs = 3
"""
    cfg = parse_run_config(text, base_dir=str(tmp_path))
    assert cfg.output_dir == os.path.join(str(tmp_path), "out")
    assert cfg.seed == 9
    assert cfg.solver.nx == 64 and len(cfg.solver.cylinders) == 2
    assert cfg.dataset.sources == [os.path.join(str(tmp_path), "a"), os.path.join(str(tmp_path), "b")]
    assert cfg.dataset.channels == ("u", "v", "p")
    assert cfg.dataset.crop is None
    model = cfg.model_config()
    assert (model.variant, model.epochs, model.seed, model.t_in, model.channels) == ("standard", 3, 9, 4, 3)
    assert cfg.default_path("dataset") == os.path.join(cfg.output_dir, "dataset")


def test_variant_argument_wins_over_config():
    cfg = parse_run_config("[model]\nvariant = standard\n")
    assert cfg.model_config("improved").variant == "improved"


def test_comparison_configs_share_training_keys():
    text = "[model]\nepochs = 4\nstem_channels = 8\n\n[compare.standard]\nhidden_channels = 8, 8\n"
    cfg_std, cfg_imp = parse_run_config(text).comparison_configs()
    assert (cfg_std.variant, cfg_imp.variant) == ("standard", "improved")
    assert cfg_std.epochs == cfg_imp.epochs == 4
    assert cfg_std.hidden_channels == (8, 8)
    # architecture keys in [model] do not leak into the comparison
    assert cfg_imp.stem_channels == 16
    assert cfg_std.seed == cfg_imp.seed


@pytest.mark.parametrize("text, message", [
    ("[solvr]\nnx = 3\n", "Unknown config section"),
    ("[solver]\nmesh = 3\n", "Unknown key 'mesh'"),
    ("[solver]\nnx = many\n", "Invalid value"),
    ("[solver]\ndt = 0.5\n", "CFL"),
    ("[dataset]\nt_out = 0\n", "targets required"),
    ("[model]\nvariant = transformer\n", "variant"),
    ("[model]\nstem_channels = 6\n", "divisible"),
    ("not a config", "Cannot parse"),
])
def test_invalid_configs(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_run_config(text)


def test_load_run_config_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[run]\nseed = 4\n")
    cfg = load_run_config(str(path))
    assert cfg.seed == 4
    assert cfg.path == str(path)
    assert cfg.output_dir == os.path.join(str(tmp_path), "runs")


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(str(tmp_path / "absent.cfg"))


def test_hash_tracks_text():
    assert parse_run_config("[run]\nseed = 1\n").config_hash != parse_run_config("[run]\nseed = 2\n").config_hash

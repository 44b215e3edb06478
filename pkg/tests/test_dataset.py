import os

import numpy as np
import pytest

from src.core.dataset import (DatasetError, DatasetSpec, NormalizationStats, build_dataset, build_dataset_from_frames,
                              crop_frames, default_crop, denormalize, load_dataset, resize_frames, sample_file,
                              save_dataset, split, window_starts)
from src.core.file_handler import ArtifactError, SnapshotWriter
from src.core.solver import FlowSnapshot, SolverConfig
from src.core.tensor import Rng

from .conftest import wave_frames


def test_split_sizes_for_one_hundred():
    train, val, test = split(100, seed=0)
    assert (len(train), len(val), len(test)) == (70, 10, 20)


def test_split_is_deterministic_and_seed_dependent():
    assert split(50, seed=3) == split(50, seed=3)
    assert split(1000, seed=1) != split(1000, seed=2)


def test_split_is_disjoint_and_exhaustive():
    rng = Rng(17)
    for _ in range(25):
        n = int(rng.generator.integers(10, 10001))
        seed = int(rng.generator.integers(0, 2 ** 32))
        parts = split(n, seed)
        combined = sorted(parts[0] + parts[1] + parts[2])
        assert combined == list(range(n))


def test_split_needs_ten_samples():
    with pytest.raises(DatasetError):
        split(9, seed=0)


def test_window_count():
    spec = DatasetSpec(t_in=10, t_out=1, stride=1)
    assert len(window_starts(100, spec)) == 90
    assert window_starts(5, spec) == []
    assert window_starts(100, DatasetSpec(t_in=10, t_out=1, stride=3))[:3] == [0, 3, 6]


def test_spec_requires_targets():
    with pytest.raises(DatasetError, match="targets required"):
        DatasetSpec(t_out=0).validate()


@pytest.mark.parametrize("fractions", [(0.7, 0.2, 0.2), (0.5, 0.5), (1.2, -0.1, -0.1)])
def test_spec_rejects_bad_fractions(fractions):
    with pytest.raises(DatasetError):
        DatasetSpec(fractions=fractions).validate()


def test_insufficient_frames_message(tiny_spec):
    with pytest.raises(DatasetError, match="4 required .* 3 available"):
        build_dataset_from_frames([wave_frames(count=3)], tiny_spec)


def test_constant_frames_violate_range(tiny_spec):
    with pytest.raises(DatasetError, match="max > min violated"):
        build_dataset_from_frames([np.full((30, 2, 4, 4), 1.5)], tiny_spec)


def test_samples_are_normalized_contiguous_windows(tiny_dataset, tiny_spec):
    frames = wave_frames()
    assert len(tiny_dataset.samples) == 40 - 4 + 1
    normalized = tiny_dataset.stats.apply(frames)
    for sample in tiny_dataset.samples:
        assert sample.input.shape == (3, 2, 8, 8)
        assert sample.target.shape == (1, 2, 8, 8)
        assert sample.input.min() >= 0.0 and sample.input.max() <= 1.0
        end = sample.start + tiny_spec.t_in
        assert np.allclose(sample.target[0], np.clip(normalized[end], 0.0, 1.0))
        assert np.allclose(sample.input, np.clip(normalized[sample.start:end], 0.0, 1.0))


def test_stats_come_from_training_windows_only(tiny_dataset, tiny_spec):
    frames = wave_frames()
    covered = sorted({s.start + k for s in tiny_dataset.train for k in range(tiny_spec.window)})
    train_frames = frames[covered]
    assert np.allclose(tiny_dataset.stats.minimum, train_frames.min(axis=(0, 2, 3)))
    assert np.allclose(tiny_dataset.stats.maximum, train_frames.max(axis=(0, 2, 3)))


def test_denormalize_inverts_normalize(tiny_dataset):
    x = wave_frames()[:5]
    restored = denormalize(tiny_dataset.stats, tiny_dataset.stats.apply(x))
    assert np.allclose(restored, x, rtol=1e-6, atol=1e-12)


def test_degenerate_stats():
    with pytest.raises(DatasetError):
        NormalizationStats(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


def test_windows_do_not_cross_sources(tiny_spec):
    dataset = build_dataset_from_frames([wave_frames(count=8), wave_frames(count=9, phase_speed=0.2)], tiny_spec)
    assert len(dataset.samples) == 5 + 6
    assert {s.source for s in dataset.samples} == {0, 1}
    assert max(s.start for s in dataset.samples if s.source == 0) == 4


def test_crop_and_resize():
    frames = np.arange(2 * 1 * 4 * 6, dtype=np.float64).reshape(2, 1, 4, 6)
    cropped = crop_frames(frames, (1, 2, 2, 4))
    assert cropped.shape == (2, 1, 2, 4)
    assert cropped[0, 0, 0, 0] == frames[0, 0, 1, 2]
    with pytest.raises(DatasetError):
        crop_frames(frames, (0, 4, 4, 4))

    resized = resize_frames(np.ones((1, 1, 8, 8)), (4, 4))
    assert resized.shape == (1, 1, 4, 4)
    assert np.allclose(resized, 1.0)
    pooled = resize_frames(np.arange(16.0).reshape(1, 1, 4, 4), (2, 2))
    assert pooled[0, 0, 0, 0] == pytest.approx(np.mean([0, 1, 4, 5]))


def test_default_crop_starts_behind_cylinder():
    manifest = {key: str(value) for key, value in SolverConfig().to_mapping().items()}
    manifest.update(grid_rows="128", grid_cols="256")
    row0, col0, height, width = default_crop(manifest)
    assert (row0, height) == (0, 128)
    assert col0 in (68, 69)
    assert col0 + width == 256 - 32


def test_default_crop_needs_snapshots():
    manifest = {key: str(value) for key, value in SolverConfig().to_mapping().items()}
    manifest["snapshot_count"] = "0"
    with pytest.raises(DatasetError, match="no snapshots"):
        default_crop(manifest)


def test_empty_snapshot_directory_is_a_dataset_error(tmp_path):
    cfg = SolverConfig(nx=8, ny=8, domain_width=0.08, domain_height=0.08, cylinders=[(0.02, 0.04, 0.01)])
    _write_source(str(tmp_path / "snaps"), [], cfg)
    spec = DatasetSpec(sources=[str(tmp_path / "snaps")], crop=None, resize=None, channels=("u", "v"),
                       t_in=3, t_out=1)
    with pytest.raises(DatasetError, match="no snapshots"):
        build_dataset(spec)


def _write_source(directory, frames_uvp, cfg):
    os.makedirs(directory, exist_ok=True)
    writer = SnapshotWriter(directory)
    for k, (u, v, p) in enumerate(frames_uvp):
        writer.write(FlowSnapshot(t=cfg.sample_interval * (k + 1), u=u, v=v, p=p))
    entries = {key: value for key, value in cfg.to_mapping().items()}
    writer.close(entries)


def test_build_dataset_from_snapshot_directory(tmp_path):
    cfg = SolverConfig(nx=8, ny=8, domain_width=0.08, domain_height=0.08, cylinders=[(0.02, 0.04, 0.01)])
    waves = wave_frames(count=24, channels=3)
    _write_source(str(tmp_path / "snaps"), [(w[0], w[1], w[2]) for w in waves], cfg)

    spec = DatasetSpec(sources=[str(tmp_path / "snaps")], crop=(0, 0, 8, 8), resize=None, channels=("u", "v"),
                       t_in=3, t_out=1, transient_fraction=0.25)
    dataset = build_dataset(spec)
    # 24 frames, 6 transient frames dropped, windows of 4
    assert len(dataset.samples) == 18 - 4 + 1
    first = dataset.stats.apply(waves[6:9, :2])
    assert np.allclose(dataset.samples[0].input, np.clip(first, 0.0, 1.0))


def test_build_dataset_missing_source(tmp_path):
    spec = DatasetSpec(sources=[str(tmp_path / "nowhere")], crop=(0, 0, 4, 4), resize=None)
    with pytest.raises(ArtifactError):
        build_dataset(spec)


def test_save_and_load_dataset(tmp_path, tiny_dataset):
    directory = str(tmp_path / "dataset")
    save_dataset(tiny_dataset, directory, extra={"seed": 0})
    assert os.path.isfile(sample_file(directory, 0))

    loaded, manifest = load_dataset(directory)
    assert manifest["seed"] == "0"
    assert loaded.train_indices == tiny_dataset.train_indices
    assert loaded.test_indices == tiny_dataset.test_indices
    assert np.array_equal(loaded.stats.minimum, tiny_dataset.stats.minimum)
    for original, restored in zip(tiny_dataset.samples, loaded.samples):
        assert np.array_equal(original.input, restored.input)
        assert np.array_equal(original.target, restored.target)
        assert (original.source, original.start) == (restored.source, restored.start)
    assert np.array_equal(loaded.frames[0], tiny_dataset.frames[0])
    assert loaded.spec.channels == ("u", "v")


def test_load_dataset_missing(tmp_path):
    with pytest.raises(ArtifactError):
        load_dataset(str(tmp_path / "absent"))


def test_manifest_records_frame_shape(tmp_path, tiny_dataset):
    directory = str(tmp_path / "dataset")
    save_dataset(tiny_dataset, directory)
    loaded, manifest = load_dataset(directory)
    assert (manifest["frame_rows"], manifest["frame_cols"]) == ("8", "8")
    assert loaded.frame_shape == tiny_dataset.frame_shape == (8, 8)


def test_source_without_frames_cannot_be_saved(tmp_path, tiny_spec):
    dataset = build_dataset_from_frames([wave_frames(), np.zeros((0, 2, 8, 8))], tiny_spec)
    directory = tmp_path / "dataset"
    with pytest.raises(DatasetError, match="source\\(s\\) 1 have no frames"):
        save_dataset(dataset, str(directory))
    assert not directory.exists()

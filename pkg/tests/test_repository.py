import dataclasses
import shutil

import numpy as np
import pytest

from src.data.repository import load_dataset, load_frames, quantize, save_dataset, save_frames
from src.data.synth import synthesize_smmnist
from src.data.models import SynthConfig
from src.errors import DatasetFormatError


def test_round_trip_is_identity_on_8bit(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(quantize(loaded.videos), quantize(tiny_dataset.videos))
    assert loaded.splits == tiny_dataset.splits
    assert loaded.seed == tiny_dataset.seed
    ours = tiny_dataset.bounce_log.all_events()
    theirs = loaded.bounce_log.all_events()
    assert [(e.video, e.frame, e.wall) for e in ours] == [(e.video, e.frame, e.wall) for e in theirs]
    for a, b in zip(ours, theirs):
        assert b.dir_x == pytest.approx(a.dir_x, abs=1e-8)


def test_missing_video_directory(tmp_path, tiny_dataset):
    root = tmp_path / "ds"
    save_dataset(tiny_dataset, root)
    shutil.rmtree(root / "video_00003")
    with pytest.raises(DatasetFormatError) as exc:
        load_dataset(root)
    assert exc.value.path.endswith("manifest.txt")


def test_manifest_declares_more_videos_than_present(tmp_path):
    ds, _ = synthesize_smmnist(SynthConfig(num_videos=5, val_videos=0, test_videos=0, seq_len=3, canvas=12, digit_size=6))
    root = tmp_path / "five"
    save_dataset(ds, root)
    shutil.rmtree(root / "video_00004")
    with pytest.raises(DatasetFormatError):
        load_dataset(root)


def test_canvas_size_comes_from_manifest(tmp_path):
    ds, _ = synthesize_smmnist(SynthConfig(num_videos=2, val_videos=0, test_videos=0, seq_len=3, canvas=20, digit_size=8))
    save_dataset(ds, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert (loaded.height, loaded.width) == (20, 20)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetFormatError) as exc:
        load_dataset(tmp_path)
    assert "manifest.txt" in exc.value.path


def test_frame_count_mismatch(tmp_path):
    frames = np.random.default_rng(0).random((4, 1, 8, 8))
    save_frames(frames, tmp_path / "v")
    assert load_frames(tmp_path / "v").shape == (4, 1, 8, 8)
    with pytest.raises(DatasetFormatError):
        load_frames(tmp_path / "v", expected_len=5)
    with pytest.raises(DatasetFormatError):
        load_frames(tmp_path / "v", expected_hw=(16, 16))


def test_resave_with_fewer_videos_and_frames(tmp_path):
    root = tmp_path / "ds"
    big, _ = synthesize_smmnist(SynthConfig(num_videos=5, val_videos=0, test_videos=0, seq_len=6, canvas=12, digit_size=6))
    small, _ = synthesize_smmnist(SynthConfig(num_videos=3, val_videos=0, test_videos=0, seq_len=4, canvas=12,
                                              digit_size=6, seed=1))
    save_dataset(big, root)
    save_dataset(small, root)
    loaded = load_dataset(root)
    assert loaded.videos.shape == (3, 4, 1, 12, 12)
    assert sorted(p.name for p in root.glob("video_*")) == ["video_00000", "video_00001", "video_00002"]
    np.testing.assert_array_equal(quantize(loaded.videos), quantize(small.videos))


def test_resave_without_bounce_log_drops_old_log(tmp_path, tiny_dataset):
    root = tmp_path / "ds"
    save_dataset(tiny_dataset, root)
    assert (root / "bounces.tsv").is_file()
    plain = dataclasses.replace(tiny_dataset, bounce_log=None)
    save_dataset(plain, root)
    assert not (root / "bounces.tsv").exists()
    assert load_dataset(root).bounce_log is None


def test_save_frames_replaces_longer_sequence(tmp_path):
    rng = np.random.default_rng(0)
    save_frames(rng.random((6, 1, 8, 8)), tmp_path / "v")
    (tmp_path / "v" / "notes.txt").write_text("keep\n")
    save_frames(rng.random((3, 1, 8, 8)), tmp_path / "v")
    assert load_frames(tmp_path / "v", expected_len=3).shape == (3, 1, 8, 8)
    assert (tmp_path / "v" / "notes.txt").is_file()

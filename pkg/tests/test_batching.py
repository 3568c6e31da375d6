import numpy as np
import pytest

from src.data.batching import batch_iter
from src.data.models import VideoDataset
from src.errors import ConfigError


def _dataset(n: int = 10, seq_len: int = 20) -> VideoDataset:
    rng = np.random.default_rng(0)
    videos = rng.random((n, seq_len, 1, 4, 4)).astype(np.float32)
    return VideoDataset(videos=videos, splits=["train"] * n)


def test_final_partial_batch_is_emitted():
    sizes = [b.batch_size for b in batch_iter(_dataset(), 4, 5, 20, seed=0)]
    assert sizes == [4, 4, 2]


def test_same_seed_same_order():
    ds = _dataset(seq_len=25)
    a = [(b.video_indices, b.starts) for b in batch_iter(ds, 4, 5, 20, seed=3)]
    b = [(b.video_indices, b.starts) for b in batch_iter(ds, 4, 5, 20, seed=3)]
    c = [(b.video_indices, b.starts) for b in batch_iter(ds, 4, 5, 20, seed=4)]
    assert a == b
    assert a != c
    assert sorted(i for idx, _ in a for i in idx) == list(range(10))


def test_windows_are_contiguous_slices():
    ds = _dataset(seq_len=25)
    for batch in batch_iter(ds, 3, 2, 7, seed=1):
        for row, (video, start) in enumerate(zip(batch.video_indices, batch.starts)):
            np.testing.assert_array_equal(batch.frames[row].numpy(), ds.videos[video, start:start + 7])


def test_context_mask_marks_first_frames():
    batch = next(batch_iter(_dataset(), 4, 5, 20, seed=0))
    mask = batch.context_mask.tolist()
    assert mask == [True] * 5 + [False] * 15
    assert batch.targets.shape[1] == 15


def test_total_len_longer_than_video():
    with pytest.raises(ConfigError):
        next(batch_iter(_dataset(seq_len=10), 4, 5, 20, seed=0))


def test_context_frames_range():
    with pytest.raises(ConfigError):
        next(batch_iter(_dataset(), 4, 20, 20, seed=0))

"""ミニバッチの切り出し"""
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from ..errors import ConfigError
from .models import VideoBatch, VideoDataset


def batch_iter(
    ds: VideoDataset,
    batch_size: int,
    context_frames: int,
    total_len: int,
    seed: int,
    split: Optional[str] = "train",
    random_window: bool = True,
    shuffle: bool = True,
    indices: Optional[Sequence[int]] = None,
) -> Iterator[VideoBatch]:
    """1 エポック分のバッチを返す

    順序はシード付きの置換、各動画から長さ total_len の連続窓を 1 つ取る。
    最後の端数バッチも返す。
    """
    if batch_size < 1:
        raise ConfigError("batch_size は 1 以上を指定してください", field="batch_size")
    if total_len > ds.seq_len:
        raise ConfigError(
            f"total_len ({total_len}) が動画長 T ({ds.seq_len}) を超えています", field="train_len"
        )
    if not 1 <= context_frames < total_len:
        raise ConfigError(
            f"context_frames は 1 以上 total_len ({total_len}) 未満を指定してください", field="context_frames"
        )

    pool = np.asarray(list(indices) if indices is not None else ds.indices(split), dtype=np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(pool) if shuffle else pool
    max_start = ds.seq_len - total_len
    starts = rng.integers(0, max_start + 1, size=len(order)) if random_window else np.zeros(len(order), dtype=np.int64)

    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        st = starts[lo:lo + batch_size]
        clips = np.stack([ds.videos[i, s:s + total_len] for i, s in zip(idx, st)])
        yield VideoBatch(
            frames=torch.from_numpy(np.ascontiguousarray(clips)),
            context_frames=context_frames,
            video_indices=tuple(int(i) for i in idx),
            starts=tuple(int(s) for s in st),
        )

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from ..errors import ConfigError, DatasetFormatError

VALID_SPLITS = ["train", "val", "test"]

# 壁から離れる向きの法線（x: 右向き正 / y: 下向き正）
WALL_NORMALS: dict[str, tuple[int, int]] = {
    "left": (1, 0),
    "right": (-1, 0),
    "top": (0, 1),
    "bottom": (0, -1),
    "top-left": (1, 1),
    "top-right": (-1, 1),
    "bottom-left": (1, -1),
    "bottom-right": (-1, -1),
}


@dataclass
class SynthConfig:
    """Stochastic Moving MNIST 生成設定"""
    num_videos: int = 1000
    val_videos: int = 50
    test_videos: int = 100
    seq_len: int = 25
    canvas: int = 48
    digit_size: int = 28
    num_digits: int = 1
    speed: float = 2.0
    digit_source: str = "procedural"   # "procedural" またはグリフ画像ディレクトリ / .npy
    seed: int = 0
    workers: int = 1

    @property
    def total_videos(self) -> int:
        return self.num_videos + self.val_videos + self.test_videos

    def validate(self) -> None:
        if self.num_videos < 0 or self.val_videos < 0 or self.test_videos < 0:
            raise ConfigError("動画本数は 0 以上を指定してください", field="num_videos")
        if self.total_videos < 1:
            raise ConfigError("動画本数の合計は 1 以上を指定してください", field="num_videos")
        if self.seq_len < 2:
            raise ConfigError("seq_len は 2 以上を指定してください", field="seq_len")
        if self.digit_size < 1:
            raise ConfigError("digit_size は 1 以上を指定してください", field="digit_size")
        if self.canvas <= self.digit_size:
            raise ConfigError(
                f"canvas ({self.canvas}) は digit_size ({self.digit_size}) より大きくしてください",
                field="canvas",
            )
        if self.speed < 1:
            raise ConfigError("speed は 1 以上を指定してください", field="speed")
        if self.num_digits < 1:
            raise ConfigError("num_digits は 1 以上を指定してください", field="num_digits")
        if self.workers < 1:
            raise ConfigError("workers は 1 以上を指定してください", field="workers")


@dataclass(frozen=True)
class BounceEvent:
    video: int
    frame: int          # 0 始まりのフレーム番号
    wall: str
    dir_x: float        # 反射後の進行方向（単位ベクトル）
    dir_y: float


@dataclass
class BounceLog:
    """動画ごとの壁反射イベント"""
    events: dict[int, list[BounceEvent]] = field(default_factory=dict)

    def add(self, event: BounceEvent) -> None:
        self.events.setdefault(event.video, []).append(event)

    def events_for(self, video: int) -> list[BounceEvent]:
        return self.events.get(video, [])

    def frames_for(self, video: int) -> list[int]:
        return [e.frame for e in self.events_for(video)]

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.events.values())

    def all_events(self) -> list[BounceEvent]:
        return [e for video in sorted(self.events) for e in self.events[video]]

    def validate(self) -> None:
        for video, events in self.events.items():
            frames = [e.frame for e in events]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise ValueError(f"video={video}: 反射フレーム番号が単調増加していません")
            for e in events:
                nx, ny = WALL_NORMALS[e.wall]
                if e.dir_x * nx + e.dir_y * ny <= 0:
                    raise ValueError(f"video={video} frame={e.frame}: 反射方向が壁の内側を向いていません")


@dataclass
class VideoDataset:
    """フレーム配列 [N, T, 1, H, W]（値域 [0,1]）と分割タグ"""
    videos: np.ndarray
    splits: list[str]
    bounce_log: Optional[BounceLog] = None
    seed: int = 0

    @property
    def num_videos(self) -> int:
        return int(self.videos.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.videos.shape[1])

    @property
    def height(self) -> int:
        return int(self.videos.shape[3])

    @property
    def width(self) -> int:
        return int(self.videos.shape[4])

    def indices(self, split: Optional[str] = None) -> list[int]:
        if split is None:
            return list(range(self.num_videos))
        return [i for i, s in enumerate(self.splits) if s == split]

    def split_counts(self) -> dict[str, int]:
        return {s: self.splits.count(s) for s in VALID_SPLITS if s in self.splits}

    def validate(self) -> None:
        if self.videos.ndim != 5 or self.videos.shape[2] != 1:
            raise DatasetFormatError(f"videos は [N, T, 1, H, W] 形状が必要です（実際: {self.videos.shape}）")
        if len(self.splits) != self.num_videos:
            raise DatasetFormatError("splits の長さが動画本数と一致しません")
        bad = sorted(set(self.splits) - set(VALID_SPLITS))
        if bad:
            raise DatasetFormatError(f"不明な split: {bad}")
        if self.videos.size and (self.videos.min() < 0 or self.videos.max() > 1):
            raise DatasetFormatError("画素値は [0,1] の範囲が必要です")


@dataclass
class VideoBatch:
    """学習・評価用のミニバッチ（先頭 context_frames 枚が観測フレーム）"""
    frames: torch.Tensor            # [B, L, 1, H, W]
    context_frames: int
    video_indices: tuple[int, ...]
    starts: tuple[int, ...]         # 各動画内での窓の開始フレーム（0 始まり）

    @property
    def batch_size(self) -> int:
        return int(self.frames.shape[0])

    @property
    def total_len(self) -> int:
        return int(self.frames.shape[1])

    @property
    def context_mask(self) -> torch.Tensor:
        """True = 観測フレーム、False = 予測対象フレーム"""
        mask = torch.zeros(self.total_len, dtype=torch.bool)
        mask[: self.context_frames] = True
        return mask

    @property
    def targets(self) -> torch.Tensor:
        return self.frames[:, self.context_frames:]

    def to(self, device: torch.device | str) -> "VideoBatch":
        return VideoBatch(self.frames.to(device), self.context_frames, self.video_indices, self.starts)

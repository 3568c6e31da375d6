"""
系列識別器 D_w と敵対的損失

識別器は k 枚の連続フレーム窓をフレームごとに畳み込みで符号化し、
1 層 LSTM で読んで最後の隠れ状態から「本物である確率」を出す。
本物の窓は動画全体から、生成側の窓は予測フレーム（t > F）からのみ切り出す。
"""
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from ..errors import ConfigError, ShapeError
from .networks import FrameEncoder, auto_num_levels

SCORE_EPS = 1e-7
VALID_ORIGINS = ["real", "generated"]


@dataclass
class FrameWindow:
    """k 枚の連続フレーム窓のバッチ"""
    frames: Tensor          # [N, k, C, H, W]
    origin: str             # "real" | "generated"
    starts: Tensor          # [N] 窓の開始フレーム（0 始まり）

    @property
    def k(self) -> int:
        return int(self.frames.shape[1])

    def validate(self) -> None:
        if self.frames.dim() != 5:
            raise ShapeError(f"窓は [N, k, C, H, W] が必要です（実際: {tuple(self.frames.shape)}）")
        if self.origin not in VALID_ORIGINS:
            raise ConfigError(f"origin は {VALID_ORIGINS} のいずれかです", field="origin")
        if self.frames.numel() and (self.frames.min() < 0 or self.frames.max() > 1):
            raise ShapeError("窓の画素値は [0,1] の範囲が必要です")


class SeqDiscriminator(nn.Module):
    def __init__(self, image_size: int, channels: int = 1, base_width: int = 64, num_levels: int = 0,
                 feature_dim: int = 128, hidden_dim: int = 256, k: int = 3):
        super().__init__()
        if k < 1:
            raise ConfigError("k は 1 以上を指定してください", field="k")
        self.k = k
        levels = num_levels or auto_num_levels(image_size)
        self.encoder = FrameEncoder(image_size, channels, base_width, levels, feature_dim)
        self.rnn = nn.LSTM(feature_dim, hidden_dim, num_layers=1, batch_first=True)
        self.head = nn.Linear(hidden_dim, 1)

    def forward(self, frames: Tensor) -> Tensor:
        if frames.dim() != 5 or frames.shape[1] != self.k:
            raise ShapeError(f"識別器の入力は k={self.k} 枚の窓 [N, k, C, H, W] が必要です（実際: {tuple(frames.shape)}）")
        n, k = frames.shape[:2]
        feats, _ = self.encoder(frames.reshape(n * k, *frames.shape[2:]))
        out, _ = self.rnn(feats.view(n, k, -1))
        return torch.sigmoid(self.head(out[:, -1])).squeeze(-1)


def disc_score(disc: SeqDiscriminator, window: FrameWindow) -> Tensor:
    """窓ごとの本物らしさ（確率）[N]"""
    if window.k != disc.k:
        raise ShapeError(f"窓の長さ {window.k} が識別器の k={disc.k} と違います")
    return disc(window.frames)


def _random_windows(frames: Tensor, k: int, generator: Optional[torch.Generator]) -> tuple[Tensor, Tensor]:
    n, length = frames.shape[:2]
    starts = torch.randint(0, length - k + 1, (n,), generator=generator)
    offsets = starts[:, None] + torch.arange(k)[None, :]
    rows = torch.arange(n)[:, None]
    return frames[rows, offsets.to(frames.device)], starts


def _resolve_generator(seed: Optional[int], generator: Optional[torch.Generator]) -> Optional[torch.Generator]:
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    return generator


def sample_real_windows(frames: Tensor, k: int, seed: Optional[int] = None, *,
                        generator: Optional[torch.Generator] = None) -> FrameWindow:
    """動画全体 [B, T, ...] から一様な開始位置で k 枚窓を 1 つずつ切り出す"""
    if frames.shape[1] < k:
        raise ConfigError(f"動画長 T={frames.shape[1]} が窓長 k={k} より短いです", field="k")
    windows, starts = _random_windows(frames, k, _resolve_generator(seed, generator))
    return FrameWindow(windows, "real", starts)


def sample_fake_windows(predicted: Tensor, k: int, seed: Optional[int] = None, *,
                        generator: Optional[torch.Generator] = None) -> FrameWindow:
    """予測フレーム [B, S, ...] から k 枚窓を切り出す（観測フレームをまたがない）"""
    if predicted.shape[1] < k:
        raise ConfigError(f"予測ステップ数 {predicted.shape[1]} が窓長 k={k} より短いです", field="k")
    windows, starts = _random_windows(predicted, k, _resolve_generator(seed, generator))
    return FrameWindow(windows, "generated", starts)


def gan_losses(real_scores: Tensor, fake_scores: Tensor) -> tuple[Tensor, Tensor]:
    """(L_D, gen_term)

    L_D = −mean log D(real) − mean log(1 − D(fake))
    gen_term = −mean log(1 − D(fake))（生成側はこれを最大化する）
    """
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ConfigError("識別器のスコアが空です", field="batch_size")
    real = real_scores.clamp(SCORE_EPS, 1 - SCORE_EPS)
    fake = fake_scores.clamp(SCORE_EPS, 1 - SCORE_EPS)
    gen_term = -torch.log1p(-fake).mean()
    disc_loss = -torch.log(real).mean() + gen_term
    return disc_loss, gen_term

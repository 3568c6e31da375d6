"""
ネットワーク部品

フレームのエンコーダ／デコーダは DCGAN 型（4x4, stride 2, padding 1 の畳み込み、
BatchNorm + LeakyReLU）で、デコーダは各段のスキップ接続を受け取る U-Net 型。
再帰部は LSTMCell の積み重ねで、状態は (h, c) のリストで持ち回る。
"""
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..errors import DomainError, ShapeError
from .distributions import GaussianParams, TruncNormalParams

LSTMState = list[tuple[Tensor, Tensor]]

BETA_FLOOR = 1e-4


def auto_num_levels(image_size: int, max_levels: int = 5) -> int:
    """image_size / 2^L >= 2 で割り切れる最大の L（48 → 4, 64 → 5）"""
    for levels in range(max_levels, 0, -1):
        if image_size % (2 ** levels) == 0 and image_size // (2 ** levels) >= 2:
            return levels
    raise ShapeError(f"image_size={image_size} は 2 の冪で割り切れないためエンコーダを構成できません")


def level_widths(base_width: int, num_levels: int) -> list[int]:
    return [base_width * 2 ** i for i in range(num_levels)]


class FrameEncoder(nn.Module):
    def __init__(self, image_size: int, channels: int, base_width: int, num_levels: int, feature_dim: int):
        super().__init__()
        if image_size % (2 ** num_levels) != 0:
            raise ShapeError(f"image_size={image_size} が 2^{num_levels} で割り切れません")
        self.image_size = image_size
        self.channels = channels
        self.num_levels = num_levels
        widths = level_widths(base_width, num_levels)
        blocks = []
        in_c = channels
        for out_c in widths:
            blocks.append(nn.Sequential(
                nn.Conv2d(in_c, out_c, kernel_size=4, stride=2, padding=1),
                nn.BatchNorm2d(out_c),
                nn.LeakyReLU(0.2),
            ))
            in_c = out_c
        self.blocks = nn.ModuleList(blocks)
        spatial = image_size // 2 ** num_levels
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(widths[-1] * spatial * spatial, feature_dim),
            nn.Tanh(),
        )

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"入力は [N, {self.channels}, H, W] が必要です（実際: {tuple(x.shape)}）")
        h, w = x.shape[-2:]
        if h % 2 ** self.num_levels or w % 2 ** self.num_levels:
            raise ShapeError(f"入力サイズ {h}x{w} が 2^{self.num_levels} で割り切れません")
        if (h, w) != (self.image_size, self.image_size):
            raise ShapeError(f"入力サイズ {h}x{w} がエンコーダの設定 {self.image_size} と違います")
        skips = []
        out = x
        for block in self.blocks:
            out = block(out)
            skips.append(out)
        return self.head(out), skips


class FrameDecoder(nn.Module):
    def __init__(self, image_size: int, channels: int, base_width: int, num_levels: int, input_dim: int):
        super().__init__()
        self.image_size = image_size
        self.num_levels = num_levels
        self.widths = level_widths(base_width, num_levels)
        self.spatial = image_size // 2 ** num_levels
        self.stem = nn.Linear(input_dim, self.widths[-1] * self.spatial * self.spatial)
        self.stem_act = nn.Sequential(nn.BatchNorm2d(self.widths[-1]), nn.LeakyReLU(0.2))
        ups = []
        for level in range(num_levels - 1, -1, -1):
            in_c = 2 * self.widths[level]
            if level > 0:
                ups.append(nn.Sequential(
                    nn.ConvTranspose2d(in_c, self.widths[level - 1], kernel_size=4, stride=2, padding=1),
                    nn.BatchNorm2d(self.widths[level - 1]),
                    nn.LeakyReLU(0.2),
                ))
            else:
                ups.append(nn.Sequential(
                    nn.ConvTranspose2d(in_c, channels, kernel_size=4, stride=2, padding=1),
                    nn.Sigmoid(),
                ))
        self.ups = nn.ModuleList(ups)

    def expected_skip_shape(self, level: int) -> tuple[int, int, int]:
        side = self.image_size // 2 ** (level + 1)
        return (self.widths[level], side, side)

    def forward(self, h: Tensor, skips: Sequence[Tensor]) -> Tensor:
        if len(skips) != self.num_levels:
            raise ShapeError(f"スキップ接続は {self.num_levels} 段必要です（実際: {len(skips)}）")
        for level, skip in enumerate(skips):
            if tuple(skip.shape[1:]) != self.expected_skip_shape(level) or skip.shape[0] != h.shape[0]:
                raise ShapeError(
                    f"スキップ接続 {level} の形状 {tuple(skip.shape)} が "
                    f"期待値 [{h.shape[0]}, {', '.join(map(str, self.expected_skip_shape(level)))}] と違います"
                )
        out = self.stem(h).view(h.shape[0], self.widths[-1], self.spatial, self.spatial)
        out = self.stem_act(out)
        for up, level in zip(self.ups, range(self.num_levels - 1, -1, -1)):
            out = up(torch.cat([out, skips[level]], dim=1))
        return out


class _LSTMStack(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.embed = nn.Linear(input_dim, hidden_dim)
        self.cells = nn.ModuleList([nn.LSTMCell(hidden_dim, hidden_dim) for _ in range(num_layers)])

    def init_state(self, batch: int, device=None, dtype=None) -> LSTMState:
        zeros = lambda: torch.zeros(batch, self.hidden_dim, device=device, dtype=dtype)  # noqa: E731
        return [(zeros(), zeros()) for _ in range(self.num_layers)]

    def _run(self, x: Tensor, state: LSTMState) -> tuple[Tensor, LSTMState]:
        out = self.embed(x)
        new_state = []
        for cell, (h, c) in zip(self.cells, state):
            h, c = cell(out, (h, c))
            new_state.append((h, c))
            out = h
        return out, new_state


class GaussianLSTM(_LSTMStack):
    """事前 g_ψ / 事後 l_φ：特徴量を受けて z_t の対角ガウスを出す"""

    def __init__(self, input_dim: int, hidden_dim: int, latent_dim: int, num_layers: int = 1):
        super().__init__(input_dim, hidden_dim, num_layers)
        self.latent_dim = latent_dim
        self.mu_head = nn.Linear(hidden_dim, latent_dim)
        self.logvar_head = nn.Linear(hidden_dim, latent_dim)

    def forward(self, x: Tensor, state: LSTMState) -> tuple[GaussianParams, LSTMState]:
        out, state = self._run(x, state)
        return GaussianParams.from_logvar(self.mu_head(out), self.logvar_head(out)), state


class PredictorLSTM(_LSTMStack):
    """予測器 f_θ：[前フレーム特徴量, z_t] を受けてデコーダ入力を出す"""

    def __init__(self, feature_dim: int, latent_dim: int, hidden_dim: int, num_layers: int = 2):
        super().__init__(feature_dim + latent_dim, hidden_dim, num_layers)
        self.feature_dim = feature_dim
        self.latent_dim = latent_dim

    def forward(self, feature: Tensor, z: Tensor, state: LSTMState) -> tuple[Tensor, LSTMState]:
        if feature.shape[-1] != self.feature_dim or z.shape[-1] != self.latent_dim:
            raise ShapeError(
                f"予測器の入力は特徴量 {self.feature_dim} 次元と z {self.latent_dim} 次元が必要です"
                f"（実際: {feature.shape[-1]}, {z.shape[-1]}）"
            )
        return self._run(torch.cat([feature, z], dim=-1), state)


class VarianceEncoder(nn.Module):
    """ζ_λ：事前分布の分散 diag(Σ_t^z) から切断正規分布の (α̂, β̂) を出す 2 層 MLP"""

    def __init__(self, latent_dim: int, hidden_dim: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(latent_dim, hidden_dim),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden_dim, 2),
        )

    def forward(self, variance: Tensor) -> TruncNormalParams:
        if not torch.isfinite(variance).all():
            raise DomainError("variance_encode: 入力に非有限値が含まれています")
        out = self.net(variance)
        alpha = F.softplus(out[..., 0])
        beta = F.softplus(out[..., 1]) + BETA_FLOOR
        return TruncNormalParams(alpha, beta)

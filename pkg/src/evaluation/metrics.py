"""
フレーム単位の画質指標（SSIM / PSNR）

SSIM は 11x11・σ=1.5 のガウス窓、C1=(0.01)²・C2=(0.03)²（画素値域 1）、
窓が画像内に収まる位置だけで平均する。共分散は標本補正なし。
"""
import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from ..errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 100.0


def _as_tensor(x) -> Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    return x.detach().to(dtype=torch.float64, device="cpu")


def _check_pair(a: Tensor, b: Tensor) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"比較するフレームの形状が一致しません: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() < 2:
        raise ShapeError(f"フレームは少なくとも [H, W] の 2 次元が必要です（実際: {tuple(a.shape)}）")


def _window_size(h: int, w: int) -> int:
    """11 を基本に、画像が小さいときは収まる最大の奇数に縮める"""
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 == 1 else size - 1


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_frames(a, b, data_range: float = 1.0) -> Tensor:
    """[..., H, W] の各フレームの SSIM（先頭の次元はそのまま残す）

    チャンネル次元を含む場合 [..., C, H, W] は C ごとに計算して平均する。
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    lead = a.shape[:-2]
    h, w = a.shape[-2:]
    size = _window_size(h, w)
    if size < 1:
        raise ShapeError("SSIM の窓を置けない大きさのフレームです")
    win = gaussian_window(size)[None, None]
    x = a.reshape(-1, 1, h, w)
    y = b.reshape(-1, 1, h, w)

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    sxx = F.conv2d(x * x, win) - mu_x ** 2
    syy = F.conv2d(y * y, win) - mu_y ** 2
    sxy = F.conv2d(x * y, win) - mu_x * mu_y

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return (num / den).mean(dim=(-3, -2, -1)).view(lead)


def ssim(a, b, data_range: float = 1.0) -> float:
    """1 フレーム（[H, W] / [C, H, W]）の SSIM"""
    values = ssim_frames(a, b, data_range)
    return float(values.mean())


def psnr_frames(a, b, max_val: float = 1.0) -> Tensor:
    """[..., H, W] の各フレームの PSNR [dB]（MSE = 0 は 100 dB）"""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    mse = (a - b).pow(2).mean(dim=(-2, -1))
    db = 20 * torch.log10(max_val / mse.sqrt())
    return db.clamp(max=PSNR_CAP)


def psnr(a, b, max_val: float = 1.0) -> float:
    values = psnr_frames(a, b, max_val)
    return float(values.mean())


def frame_scores(pred, truth, channel_dim: bool = True) -> tuple[Tensor, Tensor]:
    """[..., S, C, H, W] の予測と正解からフレームごとの (SSIM, PSNR) [..., S]"""
    pred, truth = _as_tensor(pred), _as_tensor(truth)
    _check_pair(pred, truth)
    s = ssim_frames(pred, truth)
    p = psnr_frames(pred, truth)
    if channel_dim:
        s, p = s.mean(-1), p.mean(-1)
    return s, p

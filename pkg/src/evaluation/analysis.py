"""
多様性・不確かさの解析

- diversity_report: 候補の先頭 k 本での best-of-k 曲線と、未来どうしのペアごとの
  SSIM / PSNR（intra）を時刻ごとに平均したもの
- uncertainty_report: s_t を系列ごとに min–max で [0,1] に正規化し、
  壁反射フレームの ±1 フレーム以内とそれ以外で平均を比べる
"""
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from scipy.stats import binomtest

from ..data.models import BounceLog
from ..errors import ConfigError
from ..utils.log import get_logger
from .metrics import frame_scores

logger = get_logger("analysis")

# ─────────────────────────────────────────
# 多様性
# ─────────────────────────────────────────


@dataclass
class DiversityReport:
    best_of_k: pd.DataFrame     # k, ssim
    intra: pd.DataFrame         # step, intra_ssim, intra_psnr
    num_futures: int

    def validate(self) -> None:
        values = self.best_of_k["ssim"].to_numpy()
        if np.any(np.diff(values) < 0):
            raise ValueError("best-of-k 曲線が k について単調非減少になっていません")


def best_of_k_curve(candidate_scores: np.ndarray, k_grid: Sequence[int]) -> pd.DataFrame:
    """candidate_scores [V, K]（動画 × 候補の平均 SSIM）から先頭 k 本の最大値の平均"""
    rows = [{"k": int(k), "ssim": float(candidate_scores[:, :k].max(axis=1).mean())} for k in k_grid]
    return pd.DataFrame(rows, columns=["k", "ssim"])


def diversity_report(
    futures: Mapping[int, torch.Tensor],
    truths: Optional[Mapping[int, torch.Tensor]] = None,
    k_grid: Sequence[int] = (1, 5, 10, 20, 50, 100),
) -> DiversityReport:
    """futures: 動画ごとの候補 [K, S, C, H, W]、truths: 正解 [S, C, H, W]"""
    if not futures:
        raise ConfigError("多様性解析の対象がありません", field="diversity_videos")
    counts = {int(f.shape[0]) for f in futures.values()}
    num = min(counts)
    if num < 2:
        raise ConfigError("intra 指標には 2 本以上の未来が必要です", field="K")

    pair_ssim, pair_psnr = [], []
    for cand in futures.values():
        pairs = list(combinations(range(num), 2))
        left = cand[[i for i, _ in pairs]]
        right = cand[[j for _, j in pairs]]
        s, p = frame_scores(left, right)          # [P, S]
        pair_ssim.append(s.mean(0))
        pair_psnr.append(p.mean(0))
    intra_ssim = torch.stack(pair_ssim).mean(0).numpy()
    intra_psnr = torch.stack(pair_psnr).mean(0).numpy()
    intra = pd.DataFrame({
        "step": np.arange(1, len(intra_ssim) + 1),
        "intra_ssim": intra_ssim,
        "intra_psnr": intra_psnr,
    })

    grid = sorted({int(k) for k in k_grid if k <= num})
    dropped = sorted({int(k) for k in k_grid if k > num})
    if dropped:
        logger.warning("候補数 %d を超える k を除外しました: %s", num, dropped)
    if truths:
        scores = []
        for video, cand in futures.items():
            truth = truths[video].unsqueeze(0).expand_as(cand[:num])
            s, _ = frame_scores(cand[:num], truth)
            scores.append(s.mean(-1).numpy())
        curve = best_of_k_curve(np.stack(scores), grid)
    else:
        curve = pd.DataFrame(columns=["k", "ssim"])
    report = DiversityReport(best_of_k=curve, intra=intra, num_futures=num)
    report.validate()
    return report


# ─────────────────────────────────────────
# 不確かさと壁反射
# ─────────────────────────────────────────


@dataclass
class UncertaintyReport:
    table: pd.DataFrame         # video, step, frame, s, u, bounce, near_bounce
    per_video: pd.DataFrame     # video, near_mean, far_mean
    pooled_near: float
    pooled_far: float
    p_value: float

    def validate(self) -> None:
        u = self.table["u"].to_numpy()
        if len(u) and (u.min() < 0 or u.max() > 1):
            raise ValueError("正規化した不確かさが [0,1] の範囲外です")


def scale_trace(s: np.ndarray) -> np.ndarray:
    """min–max 正規化（一定の系列はすべて 0）"""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ConfigError("不確かさトレースが空です", field="traces")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def uncertainty_report(
    traces: Mapping[int, np.ndarray],
    bounce_log: Optional[BounceLog] = None,
    frame_offset: int = 0,
    radius: int = 1,
) -> UncertaintyReport:
    """traces[video][j] は動画のフレーム frame_offset + j の予測に対応する"""
    if not traces:
        raise ConfigError("不確かさトレースが空です", field="traces")
    rows, per_video = [], []
    for video in sorted(traces):
        u = scale_trace(traces[video])
        s = np.asarray(traces[video], dtype=np.float64)
        frames = frame_offset + np.arange(len(u))
        bounces = np.asarray(bounce_log.frames_for(video) if bounce_log else [], dtype=np.int64)
        if bounces.size:
            dist = np.abs(frames[:, None] - bounces[None, :]).min(axis=1)
        else:
            dist = np.full(len(u), np.iinfo(np.int64).max)
        near = dist <= radius
        for j in range(len(u)):
            rows.append({"video": video, "step": j + 1, "frame": int(frames[j]), "s": float(s[j]),
                         "u": float(u[j]), "bounce": bool(dist[j] == 0), "near_bounce": bool(near[j])})
        per_video.append({
            "video": video,
            "near_mean": float(u[near].mean()) if near.any() else float("nan"),
            "far_mean": float(u[~near].mean()) if (~near).any() else float("nan"),
        })

    table = pd.DataFrame(rows, columns=["video", "step", "frame", "s", "u", "bounce", "near_bounce"])
    per = pd.DataFrame(per_video, columns=["video", "near_mean", "far_mean"])
    return _summarize(table, per)


def _summarize(table: pd.DataFrame, per: pd.DataFrame) -> UncertaintyReport:
    near_u = table.loc[table["near_bounce"], "u"]
    far_u = table.loc[~table["near_bounce"], "u"]
    pooled_near = float(near_u.mean()) if len(near_u) else float("nan")
    pooled_far = float(far_u.mean()) if len(far_u) else float("nan")

    # 近傍と遠方の両方がある系列で「近傍 > 遠方」の符号検定（同値は除く）
    both = per.dropna(subset=["near_mean", "far_mean"])
    wins = int((both["near_mean"] > both["far_mean"]).sum())
    losses = int((both["near_mean"] < both["far_mean"]).sum())
    p_value = float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue) if wins + losses else 1.0

    report = UncertaintyReport(table, per, pooled_near, pooled_far, p_value)
    report.validate()
    return report


def uncertainty_from_table(table: pd.DataFrame) -> UncertaintyReport:
    """保存済みの表から集計をやり直す"""
    table = table.copy()
    table["bounce"] = table["bounce"].astype(bool)
    table["near_bounce"] = table["near_bounce"].astype(bool)
    grouped = table.groupby("video", sort=True)
    per = pd.DataFrame({
        "video": list(grouped.groups),
        "near_mean": [g.loc[g["near_bounce"], "u"].mean() if g["near_bounce"].any() else float("nan")
                      for _, g in grouped],
        "far_mean": [g.loc[~g["near_bounce"], "u"].mean() if (~g["near_bounce"]).any() else float("nan")
                     for _, g in grouped],
    })
    return _summarize(table, per)

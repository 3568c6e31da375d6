"""
best-of-K 評価プロトコル

各テスト動画について先頭 F 枚から K 本の未来を生成し、正解に最も近い 1 本
（既定は平均 SSIM 最大）のフレームごとの SSIM / PSNR を報告する。
future k の乱数は derive_seed(seed, "future", k) なので、K を増やしても
先頭の候補は同じ（候補集合が入れ子になる）。
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch

from ..data.models import VideoDataset
from ..errors import ConfigError
from ..nuq.model import NUQModel
from ..utils.log import get_logger
from ..utils.seeding import resolve_device
from .metrics import frame_scores

logger = get_logger("protocol")

VALID_SELECT_BY = ["ssim", "psnr"]


@dataclass
class EvalConfig:
    K: int = 100
    context_frames: int = 5
    predict_len: int = 10
    seed: int = 0
    select_by: str = "ssim"
    split: str = "test"
    max_videos: int = 0              # 0 = 分割内の全動画
    diversity_videos: int = 10       # 多様性解析のために候補を保持する動画数
    k_grid: tuple[int, ...] = (1, 5, 10, 20, 50, 100)
    batch_size: int = 16
    workers: int = 1
    device: str = ""

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("K は 1 以上を指定してください", field="K")
        if self.context_frames < 1:
            raise ConfigError("context_frames は 1 以上を指定してください", field="context_frames")
        if self.predict_len < 1:
            raise ConfigError("predict_len は 1 以上を指定してください", field="predict_len")
        if self.select_by not in VALID_SELECT_BY:
            raise ConfigError(f"select_by は {VALID_SELECT_BY} のいずれかを指定してください", field="select_by")
        if self.split not in ("train", "val", "test"):
            raise ConfigError("split は train / val / test のいずれかを指定してください", field="split")
        if any(k < 1 for k in self.k_grid):
            raise ConfigError("k_grid の値は 1 以上を指定してください", field="k_grid")
        for name in ("max_videos", "diversity_videos"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} は 0 以上を指定してください", field=name)
        for name in ("batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} は 1 以上を指定してください", field=name)


@dataclass
class MetricReport:
    """選ばれた未来のフレームごとの指標

    frames の frame 列は動画内の絶対フレーム番号（0 始まり、観測フレームは含まない）。
    """
    frames: pd.DataFrame                  # video, frame, ssim, psnr
    K: int
    select_by: str = "ssim"
    selection: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["video", "future", "score"]))
    traces: dict[int, np.ndarray] = field(default_factory=dict)       # 選ばれた未来の s_t
    futures: dict[int, torch.Tensor] = field(default_factory=dict)    # 候補全体 [K, S, C, H, W]
    truths: dict[int, torch.Tensor] = field(default_factory=dict)     # 正解 [S, C, H, W]

    @property
    def mean_ssim(self) -> float:
        return float(self.frames["ssim"].mean()) if len(self.frames) else float("nan")

    @property
    def mean_psnr(self) -> float:
        return float(self.frames["psnr"].mean()) if len(self.frames) else float("nan")

    def per_video(self) -> pd.DataFrame:
        return self.frames.groupby("video", sort=True)[["ssim", "psnr"]].mean().reset_index()

    def validate(self) -> None:
        if ((self.frames["ssim"] < -1 - 1e-9) | (self.frames["ssim"] > 1 + 1e-9)).any():
            raise ValueError("SSIM が [-1, 1] の範囲外です")
        if (self.frames["psnr"] < 0).any():
            raise ValueError("PSNR が負の値です")


def select_best(ssim_k: torch.Tensor, psnr_k: torch.Tensor, select_by: str = "ssim") -> int:
    """候補 [K, S] の指標から最良の未来の番号を返す（同点は若い番号）"""
    if select_by not in VALID_SELECT_BY:
        raise ConfigError(f"select_by は {VALID_SELECT_BY} のいずれかを指定してください", field="select_by")
    scores = (ssim_k if select_by == "ssim" else psnr_k).mean(-1)
    return int(np.argmax(scores.numpy()))


def _eval_batch(
    model: NUQModel,
    dataset: VideoDataset,
    videos: Sequence[int],
    K: int,
    context_frames: int,
    steps: int,
    seed: int,
    select_by: str,
    keep: set[int],
    device: torch.device,
) -> list[dict]:
    clips = torch.from_numpy(np.ascontiguousarray(dataset.videos[list(videos), :context_frames + steps]))
    context = clips[:, :context_frames].to(device)
    truth = clips[:, context_frames:]
    result = model.rollout_generate(context, steps, num_futures=K, seed=seed)
    frames = result.frames.cpu()                       # [K, B, S, C, H, W]
    ssim_kb, psnr_kb = frame_scores(frames, truth.unsqueeze(0).expand_as(frames))
    out = []
    for j, video in enumerate(videos):
        best = select_best(ssim_kb[:, j], psnr_kb[:, j], select_by)
        chosen = ssim_kb[best, j] if select_by == "ssim" else psnr_kb[best, j]
        out.append({
            "video": int(video),
            "best": best,
            "score": float(chosen.mean()),
            "ssim": ssim_kb[best, j].numpy(),
            "psnr": psnr_kb[best, j].numpy(),
            "trace": result.s[best, j].cpu().numpy().astype(np.float64),
            "futures": frames[:, j].clone() if video in keep else None,
            "truth": truth[j].clone() if video in keep else None,
        })
    return out


def best_of_k_eval(
    model: NUQModel | str | Path,
    dataset: VideoDataset,
    K: int,
    context_frames: int,
    steps: int,
    seed: int = 0,
    *,
    indices: Optional[Sequence[int]] = None,
    split: str = "test",
    select_by: str = "ssim",
    batch_size: int = 16,
    workers: int = 1,
    keep_futures: int = 0,
    device: Optional[str | torch.device] = None,
) -> MetricReport:
    """best-of-K で評価する（model はモデルかチェックポイントのパス）

    keep_futures 本目までの動画については候補の未来と正解を保持する（多様性解析用）。
    """
    if K < 1:
        raise ConfigError("K は 1 以上を指定してください", field="K")
    if select_by not in VALID_SELECT_BY:
        raise ConfigError(f"select_by は {VALID_SELECT_BY} のいずれかを指定してください", field="select_by")
    if context_frames + steps > dataset.seq_len:
        raise ConfigError(
            f"context_frames + steps ({context_frames + steps}) が動画長 T ({dataset.seq_len}) を超えています",
            field="predict_len",
        )
    device = device if isinstance(device, torch.device) else resolve_device(device or None)
    if not isinstance(model, NUQModel):
        from ..training.checkpoint import load_model
        model = load_model(model, device=device)
    videos = list(indices) if indices is not None else dataset.indices(split)
    if not videos:
        raise ConfigError(f"評価対象の動画がありません（split={split}）", field="split")
    keep = set(videos[:keep_futures])
    chunks = [videos[i:i + batch_size] for i in range(0, len(videos), batch_size)]

    was_training = model.training
    model.eval()
    try:
        args = (model, dataset)
        rest = (K, context_frames, steps, seed, select_by, keep, device)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(lambda chunk: _eval_batch(*args, chunk, *rest), chunks))
        else:
            results = [_eval_batch(*args, chunk, *rest) for chunk in chunks]
    finally:
        model.train(was_training)

    rows, selection = [], []
    report = MetricReport(frames=pd.DataFrame(), K=K, select_by=select_by)
    for item in (r for batch in results for r in batch):
        video = item["video"]
        for j in range(steps):
            rows.append({"video": video, "frame": context_frames + j,
                         "ssim": float(item["ssim"][j]), "psnr": float(item["psnr"][j])})
        selection.append({"video": video, "future": item["best"], "score": item["score"]})
        report.traces[video] = item["trace"]
        if item["futures"] is not None:
            report.futures[video] = item["futures"]
            report.truths[video] = item["truth"]
    report.frames = pd.DataFrame(rows, columns=["video", "frame", "ssim", "psnr"])
    report.selection = pd.DataFrame(selection, columns=["video", "future", "score"])
    report.validate()
    logger.info("best-of-%d: %d videos, SSIM=%.4f PSNR=%.2f", K, len(videos), report.mean_ssim, report.mean_psnr)
    return report

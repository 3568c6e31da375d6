"""
データセットの保存・読み込み

ディレクトリ構成:
    manifest.txt               key=value（num_videos, T, H, W, seed, split, format_version）
    video_00000/frame_0000.png 8bit グレースケール
    bounces.tsv                video, frame, wall, dir_x, dir_y（合成データのみ）
"""
import shutil
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from PIL import Image

from ..errors import DatasetFormatError
from ..utils.log import get_logger
from .models import BounceEvent, BounceLog, VideoDataset

logger = get_logger("data.repository")

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
BOUNCE_LOG_NAME = "bounces.tsv"
BOUNCE_COLUMNS = ["video", "frame", "wall", "dir_x", "dir_y"]
_MANIFEST_KEYS = ["num_videos", "T", "H", "W", "seed", "split"]


# ─────────────────────────────────────────
# Utility
# ─────────────────────────────────────────

def quantize(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frames, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _encode_splits(splits: list[str]) -> str:
    """連続する同じタグをまとめた `train:500,val:50` 形式"""
    runs: list[list] = []
    for tag in splits:
        if runs and runs[-1][0] == tag:
            runs[-1][1] += 1
        else:
            runs.append([tag, 1])
    return ",".join(f"{tag}:{n}" for tag, n in runs)


def _decode_splits(text: str, path: Path) -> list[str]:
    splits: list[str] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        try:
            tag, n = part.split(":")
            splits.extend([tag] * int(n))
        except ValueError:
            raise DatasetFormatError(f"split の書式が不正です: '{part}'", path=str(path))
    return splits


# ─────────────────────────────────────────
# Frames
# ─────────────────────────────────────────

def clear_outputs(directory: str | Path, patterns: Sequence[str]) -> int:
    """directory 直下で patterns に一致するファイル・ディレクトリを消す（前回の出力の残りを残さない）"""
    directory = Path(directory)
    if not directory.is_dir():
        return 0
    removed = 0
    for pattern in patterns:
        for p in directory.glob(pattern):
            if p.is_dir():
                shutil.rmtree(p)
            else:
                p.unlink()
            removed += 1
    if removed:
        logger.debug("前回の出力を %d 件削除しました: %s", removed, directory)
    return removed


def save_frames(frames: np.ndarray, directory: str | Path) -> None:
    """[T, 1, H, W] (値域 [0,1]) を frame_%04d.png として書き出す"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clear_outputs(directory, ["frame_*.png"])
    for t, frame in enumerate(quantize(frames)):
        Image.fromarray(frame[0]).save(directory / f"frame_{t:04d}.png")


def load_frames(directory: str | Path, expected_len: Optional[int] = None,
                expected_hw: Optional[tuple[int, int]] = None) -> np.ndarray:
    directory = Path(directory)
    files = sorted(directory.glob("frame_*.png"))
    if expected_len is not None and len(files) != expected_len:
        raise DatasetFormatError(
            f"フレーム数が一致しません（期待 {expected_len} / 実際 {len(files)}）", path=str(directory)
        )
    if not files:
        raise DatasetFormatError("フレーム画像がありません", path=str(directory))
    frames = []
    for f in files:
        arr = np.asarray(Image.open(f).convert("L"), dtype=np.uint8)
        if expected_hw is not None and arr.shape != tuple(expected_hw):
            raise DatasetFormatError(
                f"画像サイズが manifest と一致しません（期待 {expected_hw} / 実際 {arr.shape}）", path=str(f)
            )
        frames.append(arr)
    return (np.stack(frames)[:, None].astype(np.float32)) / 255.0


# ─────────────────────────────────────────
# Bounce log
# ─────────────────────────────────────────

def _row_to_event(row) -> BounceEvent:
    return BounceEvent(
        video=int(row["video"]),
        frame=int(row["frame"]),
        wall=str(row["wall"]),
        dir_x=float(row["dir_x"]),
        dir_y=float(row["dir_y"]),
    )


def save_bounce_log(log: BounceLog, path: str | Path) -> None:
    rows = [
        {"video": e.video, "frame": e.frame, "wall": e.wall, "dir_x": e.dir_x, "dir_y": e.dir_y}
        for e in log.all_events()
    ]
    df = pd.DataFrame(rows, columns=BOUNCE_COLUMNS)
    df.to_csv(path, sep="\t", index=False, float_format="%.9f")


def load_bounce_log(path: str | Path) -> BounceLog:
    path = Path(path)
    try:
        df = pd.read_csv(path, sep="\t")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetFormatError(f"反射ログを読めません: {e}", path=str(path)) from e
    missing = [c for c in BOUNCE_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetFormatError(f"反射ログに列がありません: {missing}", path=str(path))
    log = BounceLog()
    for _, row in df.iterrows():
        log.add(_row_to_event(row))
    return log


# ─────────────────────────────────────────
# Dataset
# ─────────────────────────────────────────

def _read_manifest(path: Path) -> dict:
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetFormatError("manifest.txt がありません", path=str(manifest_path))
    raw = dotenv_values(manifest_path)
    missing = [k for k in _MANIFEST_KEYS if not raw.get(k)]
    if missing:
        raise DatasetFormatError(f"manifest に必須キーがありません: {missing}", path=str(manifest_path))
    try:
        manifest = {
            "num_videos": int(raw["num_videos"]),
            "T": int(raw["T"]),
            "H": int(raw["H"]),
            "W": int(raw["W"]),
            "seed": int(raw["seed"]),
            "split": _decode_splits(raw["split"], manifest_path),
        }
    except ValueError as e:
        raise DatasetFormatError(f"manifest の値が不正です: {e}", path=str(manifest_path)) from e
    if len(manifest["split"]) != manifest["num_videos"]:
        raise DatasetFormatError("split の合計が num_videos と一致しません", path=str(manifest_path))
    return manifest


def save_dataset(ds: VideoDataset, path: str | Path) -> None:
    ds.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    clear_outputs(path, ["video_*", BOUNCE_LOG_NAME])
    lines = [
        f"format_version={FORMAT_VERSION}",
        f"num_videos={ds.num_videos}",
        f"T={ds.seq_len}",
        f"H={ds.height}",
        f"W={ds.width}",
        f"seed={ds.seed}",
        f"split={_encode_splits(ds.splits)}",
    ]
    (path / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for i in range(ds.num_videos):
        save_frames(ds.videos[i], path / f"video_{i:05d}")
    if ds.bounce_log is not None:
        save_bounce_log(ds.bounce_log, path / BOUNCE_LOG_NAME)
    logger.info("データセットを保存しました: %s (%d 本)", path, ds.num_videos)


def load_dataset(path: str | Path) -> VideoDataset:
    path = Path(path)
    manifest = _read_manifest(path)
    video_dirs = sorted(p for p in path.glob("video_*") if p.is_dir())
    if len(video_dirs) != manifest["num_videos"]:
        raise DatasetFormatError(
            f"動画ディレクトリ数が manifest と一致しません（期待 {manifest['num_videos']} / 実際 {len(video_dirs)}）",
            path=str(path / MANIFEST_NAME),
        )
    hw = (manifest["H"], manifest["W"])
    videos = np.stack([load_frames(d, expected_len=manifest["T"], expected_hw=hw) for d in video_dirs])
    bounce_path = path / BOUNCE_LOG_NAME
    bounce_log = load_bounce_log(bounce_path) if bounce_path.is_file() else None
    ds = VideoDataset(videos=videos, splits=manifest["split"], bounce_log=bounce_log, seed=manifest["seed"])
    ds.validate()
    return ds

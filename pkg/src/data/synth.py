"""
Stochastic Moving MNIST 生成モジュール。

数字グリフが等速直線運動し、壁に当たると外向き半平面から一様に選んだ
新しい方向へ（速さは保ったまま）進む。反射イベントは BounceLog に記録する。
動画ごとにマスターシードから派生した独立な乱数列を使うので、
並列生成しても結果はシードだけで決まる。
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import ConfigError
from ..utils.log import get_logger
from .models import WALL_NORMALS, BounceEvent, BounceLog, SynthConfig, VideoDataset

logger = get_logger("data.synth")

# ─────────────────────────────────────────
# グリフ
# ─────────────────────────────────────────

def _segment_distance(px: np.ndarray, py: np.ndarray, a: tuple, b: tuple) -> np.ndarray:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def procedural_glyphs(size: int) -> np.ndarray:
    """円・リング・棒を組み合わせたアンチエイリアス付きグリフ 10 種 [10, size, size]"""
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    r_out = 0.38 * size
    half_w = max(0.08 * size, 0.75)
    lo, hi = c - r_out, c + r_out

    def cover(dist: np.ndarray) -> np.ndarray:
        # 境界 1px でなめらかに落とす
        return np.clip(half_w - dist + 0.5, 0.0, 1.0)

    radius = np.hypot(xs - c, ys - c)
    ring = cover(np.abs(radius - r_out + half_w))
    disc = np.clip(r_out - radius + 0.5, 0.0, 1.0)
    vbar = cover(_segment_distance(xs, ys, (c, lo), (c, hi)))
    hbar = cover(_segment_distance(xs, ys, (lo, c), (hi, c)))
    slash = cover(_segment_distance(xs, ys, (lo, hi), (hi, lo)))
    backslash = cover(_segment_distance(xs, ys, (lo, lo), (hi, hi)))
    base = cover(_segment_distance(xs, ys, (lo, hi), (hi, hi)))
    left = cover(_segment_distance(xs, ys, (lo, lo), (lo, hi)))

    glyphs = [
        ring,
        vbar,
        hbar,
        slash,
        backslash,
        np.maximum(vbar, hbar),
        np.maximum(slash, backslash),
        disc,
        np.maximum(ring, vbar),
        np.maximum(left, base),
    ]
    return np.stack(glyphs).astype(np.float32)


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    pil = Image.fromarray(np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8))
    pil = pil.resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(pil, dtype=np.float32) / 255.0


def load_glyphs(source: str, size: int) -> np.ndarray:
    """グリフ画像ディレクトリ（*.png）または .npy（[N, h, w]）を読み込む"""
    if source == "procedural":
        return procedural_glyphs(size)

    path = Path(source)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise ConfigError(f"グリフ画像が見つかりません: {path}", field="digit_source")
        raw = [np.asarray(Image.open(f).convert("L"), dtype=np.float32) / 255.0 for f in files]
    elif path.suffix == ".npy" and path.is_file():
        arr = np.load(path)
        if arr.ndim != 3:
            raise ConfigError(f"{path}: [N, h, w] 形状の配列が必要です", field="digit_source")
        arr = arr.astype(np.float32)
        raw = list(arr / 255.0 if arr.max() > 1.0 else arr)
    else:
        raise ConfigError(f"digit_source を読み込めません: {source}", field="digit_source")

    glyphs = np.stack([_resize(g, size) for g in raw])
    glyphs = glyphs[glyphs.reshape(len(glyphs), -1).max(axis=1) > 0]
    if len(glyphs) == 0:
        raise ConfigError(f"{source}: 非ゼロ画素を含むグリフがありません", field="digit_source")
    return glyphs


# ─────────────────────────────────────────
# 運動モデル
# ─────────────────────────────────────────

def _outgoing_direction(rng: np.random.Generator, wall: str) -> np.ndarray:
    nx, ny = WALL_NORMALS[wall]
    center = np.arctan2(ny, nx)
    # 単一の壁は外向き半平面、角は内向きの象限から一様に選ぶ
    half = np.pi / 2 if (nx == 0 or ny == 0) else np.pi / 4
    angle = center + rng.uniform(-half, half)
    return np.array([np.cos(angle), np.sin(angle)])


def simulate_trajectory(
    rng: np.random.Generator,
    seq_len: int,
    limit: float,
    speed: float,
    start: Optional[np.ndarray] = None,
    velocity: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, list[tuple[int, str, np.ndarray]]]:
    """左上座標 (x, y) ∈ [0, limit]^2 の軌跡 [T, 2] と反射イベントを返す"""
    pos = np.array(start, dtype=np.float64) if start is not None else rng.uniform(0.0, limit, size=2)
    if velocity is None:
        theta = rng.uniform(0.0, 2 * np.pi)
        vel = speed * np.array([np.cos(theta), np.sin(theta)])
    else:
        vel = np.array(velocity, dtype=np.float64)
    magnitude = float(np.hypot(*vel))

    positions = np.empty((seq_len, 2))
    positions[0] = pos
    events: list[tuple[int, str, np.ndarray]] = []

    for t in range(1, seq_len):
        pos = pos + vel
        wall_x = wall_y = None
        # x → y の順で壁に当てる
        if pos[0] < 0:
            pos[0], wall_x = 0.0, "left"
        elif pos[0] > limit:
            pos[0], wall_x = limit, "right"
        if pos[1] < 0:
            pos[1], wall_y = 0.0, "top"
        elif pos[1] > limit:
            pos[1], wall_y = limit, "bottom"

        if wall_x or wall_y:
            wall = f"{wall_y}-{wall_x}" if (wall_x and wall_y) else (wall_x or wall_y)
            direction = _outgoing_direction(rng, wall)
            vel = magnitude * direction
            events.append((t, wall, direction))
        positions[t] = pos

    return positions, events


def render_frames(positions: list[np.ndarray], glyphs: list[np.ndarray], canvas: int) -> np.ndarray:
    """整数座標に丸めて max 合成し、8bit 量子化した [T, H, W] uint8 を返す"""
    seq_len = positions[0].shape[0]
    frames = np.zeros((seq_len, canvas, canvas), dtype=np.float32)
    for traj, glyph in zip(positions, glyphs):
        size = glyph.shape[0]
        cols = np.rint(traj[:, 0]).astype(int)
        rows = np.rint(traj[:, 1]).astype(int)
        for t in range(seq_len):
            r, c = rows[t], cols[t]
            patch = frames[t, r:r + size, c:c + size]
            np.maximum(patch, glyph, out=patch)
    return np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)


def _synthesize_video(
    index: int, rng: np.random.Generator, cfg: SynthConfig, glyphs: np.ndarray
) -> tuple[np.ndarray, list[BounceEvent]]:
    limit = float(cfg.canvas - cfg.digit_size)
    trajectories, chosen = [], []
    events: dict[int, BounceEvent] = {}
    for _ in range(cfg.num_digits):
        chosen.append(glyphs[rng.integers(len(glyphs))])
        traj, raw_events = simulate_trajectory(rng, cfg.seq_len, limit, cfg.speed)
        trajectories.append(traj)
        for frame, wall, direction in raw_events:
            # 1 フレーム 1 イベント（複数数字が同時に当たった場合は先の数字を残す）
            events.setdefault(frame, BounceEvent(index, frame, wall, float(direction[0]), float(direction[1])))
    frames = render_frames(trajectories, chosen, cfg.canvas)
    return frames, [events[f] for f in sorted(events)]


def synthesize_smmnist(cfg: SynthConfig) -> tuple[VideoDataset, BounceLog]:
    """SynthConfig に従って動画を生成する（シードに対して決定的）"""
    cfg.validate()
    glyphs = load_glyphs(cfg.digit_source, cfg.digit_size)
    total = cfg.total_videos
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(total)]

    videos = np.empty((total, cfg.seq_len, 1, cfg.canvas, cfg.canvas), dtype=np.float32)
    log = BounceLog()
    results: dict[int, list[BounceEvent]] = {}

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        future_to_idx = {
            executor.submit(_synthesize_video, i, streams[i], cfg, glyphs): i
            for i in range(total)
        }
        for future in as_completed(future_to_idx):
            idx = future_to_idx[future]
            frames, events = future.result()
            videos[idx, :, 0] = frames.astype(np.float32) / 255.0
            results[idx] = events

    for idx in range(total):
        for event in results[idx]:
            log.add(event)

    splits = ["train"] * cfg.num_videos + ["val"] * cfg.val_videos + ["test"] * cfg.test_videos
    dataset = VideoDataset(videos=videos, splits=splits, bounce_log=log, seed=cfg.seed)
    logger.info(
        "SMMNIST 生成完了: %d 本 (T=%d, %dx%d), 反射 %d 回",
        total, cfg.seq_len, cfg.canvas, cfg.canvas, log.total,
    )
    return dataset, log

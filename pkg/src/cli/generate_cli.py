from pathlib import Path

import click
import numpy as np
import pandas as pd
import torch
from rich import box
from rich.panel import Panel

from ..data.repository import clear_outputs, load_dataset, load_frames, save_frames
from ..errors import ConfigError
from ..training.checkpoint import load_checkpoint, model_from_checkpoint
from ..utils.log import console
from ..utils.seeding import resolve_device
from .common import handle_errors, print_summary


def _load_context(data_dir, video, context_dir, context_frames: int) -> np.ndarray:
    if context_dir:
        frames = load_frames(context_dir)
    elif data_dir:
        dataset = load_dataset(data_dir)
        if video is None:
            pool = dataset.indices("test") or dataset.indices()
            video = pool[0]
        if not 0 <= video < dataset.num_videos:
            raise ConfigError(f"video={video} はデータセットの範囲外です（0..{dataset.num_videos - 1}）", field="video")
        frames = dataset.videos[video]
    else:
        raise ConfigError("--data か --context のどちらかで観測フレームを指定してください", field="context")
    if len(frames) < context_frames:
        raise ConfigError(f"観測フレームが {len(frames)} 枚しかありません（必要 {context_frames} 枚）",
                          field="context_frames")
    return frames[:context_frames]


def write_future(frames: np.ndarray, trace: np.ndarray, out_dir: Path, index: int) -> None:
    """future_%03d/ にフレーム、future_%03d_trace.csv に s_t と b_t を書く"""
    save_frames(frames, out_dir / f"future_{index:03d}")
    table = pd.DataFrame({"step": np.arange(1, len(trace) + 1), "s": trace, "b": 1.0 / trace})
    table.to_csv(out_dir / f"future_{index:03d}_trace.csv", index=False, float_format="%.8g")


@click.command("generate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", default=None, type=click.Path(file_okay=False), help="観測フレームを取るデータセット")
@click.option("--video", type=int, default=None, help="データセット内の動画番号（既定: test の先頭）")
@click.option("--context", "context_dir", default=None, type=click.Path(file_okay=False),
              help="観測フレーム（frame_*.png）のディレクトリ")
@click.option("--context-frames", type=int, default=None, help="観測フレーム数 F（既定: 学習時の設定）")
@click.option("--K", "num_futures", type=int, default=3, show_default=True, help="生成する未来の本数")
@click.option("--steps", type=int, default=20, show_default=True, help="予測フレーム数")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def generate_cli(checkpoint_path, data_dir, video, context_dir, context_frames, num_futures, steps, seed, out_dir):
    """学習済みモデルで未来を K 本生成し、フレームと不確かさトレースを保存"""
    with handle_errors():
        device = resolve_device()
        ckpt = load_checkpoint(checkpoint_path, map_location=device)
        model = model_from_checkpoint(ckpt, device)
        f = context_frames or int(ckpt.config.get("context_frames", 1))
        context = _load_context(data_dir, video, context_dir, f)
        if context.shape[-1] != model.cfg.image_size:
            raise ConfigError(
                f"観測フレームのサイズ {context.shape[-1]} がモデルの image_size {model.cfg.image_size} と違います",
                field="context",
            )

        console.print(f"\n[bold cyan]未来を {num_futures} 本生成しています...[/bold cyan]"
                      f"（F={f}, steps={steps}, seed={seed}）")
        result = model.rollout_generate(torch.from_numpy(np.ascontiguousarray(context)).to(device),
                                        steps, num_futures=num_futures, seed=seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        clear_outputs(out, ["future_*"])
        traces = result.s[:, 0].cpu().numpy().astype(np.float64)
        for k in range(result.num_futures):
            write_future(result.frames[k, 0].cpu().numpy(), traces[k], out, k)

    lines = [f"future {k:03d}: s 平均 {traces[k].mean():.4f} / 最大 {traces[k].max():.4f}" for k in range(len(traces))]
    console.print(Panel("\n".join(lines), title="[bold]不確かさトレース[/bold]", box=box.ROUNDED))
    console.print(f"[green]✓ 保存しました: {out_dir}[/green]\n")
    print_summary(command="generate", out=out_dir, K=num_futures, steps=steps, seed=seed, context_frames=f)

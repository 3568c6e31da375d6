import click
from rich import box
from rich.table import Table

from ..config import load_config
from ..data.repository import load_dataset
from ..errors import ConfigError
from ..evaluation.analysis import diversity_report, uncertainty_report
from ..evaluation.protocol import EvalConfig, best_of_k_eval
from ..evaluation.reports import emit_reports, load_reports
from ..utils.log import console, get_logger
from .common import config_options, handle_errors, print_summary, show_config

logger = get_logger("cli.eval")


@click.command("eval")
@config_options(EvalConfig)
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", default=None, type=click.Path(file_okay=False))
@click.option("--K", "num_futures", type=int, default=None, help="動画ごとの生成本数（設定の K を上書き）")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="レポートの出力先")
def eval_cli(config_path, overrides, show_config_flag, checkpoint_path, data_dir, num_futures, seed, out_dir):
    """best-of-K 評価・多様性・不確かさ解析を行いレポートを書き出す"""
    with handle_errors():
        cfg = load_config(EvalConfig, "eval", config_path, overrides, extra={"K": num_futures, "seed": seed})
        if show_config_flag:
            show_config(cfg)
            return
        for value, name in ((checkpoint_path, "checkpoint"), (data_dir, "data"), (out_dir, "out")):
            if not value:
                raise ConfigError(f"--{name} を指定してください", field=name)
        dataset = load_dataset(data_dir)
        videos = dataset.indices(cfg.split)
        if cfg.max_videos:
            videos = videos[:cfg.max_videos]

        console.print(f"\n[bold cyan]best-of-{cfg.K} で評価しています...[/bold cyan]（{len(videos)} 本）")
        metric = best_of_k_eval(
            checkpoint_path, dataset, cfg.K, cfg.context_frames, cfg.predict_len, cfg.seed,
            indices=videos, split=cfg.split, select_by=cfg.select_by, batch_size=cfg.batch_size,
            workers=cfg.workers, keep_futures=cfg.diversity_videos, device=cfg.device or None,
        )
        reports = [metric]
        if cfg.K >= 2 and metric.futures:
            reports.append(diversity_report(metric.futures, metric.truths, cfg.k_grid))
        else:
            logger.warning("K < 2 または diversity_videos = 0 のため多様性解析を省略します")
        uncertainty = uncertainty_report(metric.traces, dataset.bounce_log, frame_offset=cfg.context_frames)
        reports.append(uncertainty)
        emit_reports(reports, out_dir)

    table = Table(box=box.ROUNDED)
    table.add_column("指標", style="cyan")
    table.add_column("値", justify="right")
    table.add_row("SSIM（平均）", f"{metric.mean_ssim:.4f}")
    table.add_row("PSNR（平均）", f"{metric.mean_psnr:.2f}")
    table.add_row("不確かさ（反射 ±1）", f"{uncertainty.pooled_near:.4f}")
    table.add_row("不確かさ（その他）", f"{uncertainty.pooled_far:.4f}")
    table.add_row("符号検定 p 値", f"{uncertainty.p_value:.4g}")
    console.print(table)
    console.print(f"[green]✓ レポート: {out_dir}[/green]\n")
    print_summary(command="eval", K=cfg.K, videos=len(videos), ssim=f"{metric.mean_ssim:.6f}",
                  psnr=f"{metric.mean_psnr:.4f}", p_value=f"{uncertainty.p_value:.6g}", out=out_dir)


@click.command("report")
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False), help="eval の出力ディレクトリ")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def report_cli(in_dir, out_dir):
    """eval の出力から表と図を作り直す"""
    with handle_errors():
        reports = load_reports(in_dir)
        paths = emit_reports(reports, out_dir)
    for path in paths:
        console.print(f"  [dim]{path}[/dim]")
    print_summary(command="report", out=out_dir, files=len(paths))

import click
from rich import box
from rich.table import Table

from ..config import load_config
from ..data.models import SynthConfig
from ..data.repository import save_dataset
from ..data.synth import synthesize_smmnist
from ..errors import ConfigError
from ..utils.log import console
from .common import config_options, handle_errors, print_summary, show_config


@click.command("make-data")
@config_options(SynthConfig)
@click.option("--out", "-d", "out_dir", default=None, type=click.Path(file_okay=False),
              help="データセットの出力ディレクトリ")
@click.option("--seed", type=int, default=None, help="乱数シード（設定の seed を上書き）")
def make_data_cli(config_path, overrides, show_config_flag, out_dir, seed):
    """Stochastic Moving MNIST を生成して保存"""
    with handle_errors():
        cfg = load_config(SynthConfig, "data", config_path, overrides, extra={"seed": seed})
        if show_config_flag:
            show_config(cfg)
            return
        if not out_dir:
            raise ConfigError("--out で出力ディレクトリを指定してください", field="out")
        console.print(f"\n[bold cyan]SMMNIST を生成しています...[/bold cyan] ({cfg.total_videos} 本)")
        dataset, bounce_log = synthesize_smmnist(cfg)
        save_dataset(dataset, out_dir)

    table = Table(box=box.ROUNDED)
    table.add_column("split", style="cyan")
    table.add_column("本数", justify="right")
    for split, count in dataset.split_counts().items():
        table.add_row(split, str(count))
    console.print(table)
    console.print(f"[dim]形状: T={dataset.seq_len} H={dataset.height} W={dataset.width} / "
                  f"壁反射 {bounce_log.total} 回[/dim]")
    console.print(f"[green]✓ 保存しました: {out_dir}[/green]\n")

    print_summary(command="make-data", out=out_dir, videos=dataset.num_videos, T=dataset.seq_len,
                  H=dataset.height, W=dataset.width, bounces=bounce_log.total, seed=cfg.seed)

import click
from rich import box
from rich.table import Table

from ..config import load_config
from ..data.repository import load_dataset
from ..errors import ConfigError
from ..training.config import VALID_VARIANTS, TrainConfig
from ..training.trainer import Trainer
from ..utils.log import console
from .common import config_options, handle_errors, print_summary, show_config


@click.command("train")
@config_options(TrainConfig)
@click.option("--data", "data_dir", default=None, type=click.Path(file_okay=False), help="make-data で作ったデータセット")
@click.option("--variant", type=click.Choice(VALID_VARIANTS), default=None, help="nuq（既定）/ fixed（精度固定ベースライン）")
@click.option("--gan", type=click.BOOL, default=None, help="敵対的項を使うか（true / false）")
@click.option("--epochs", type=int, default=None, help="エポック数（0 で検証のみ）")
@click.option("--seed", type=int, default=None)
@click.option("--resume", "resume_from", default=None, type=click.Path(dir_okay=False),
              help="このチェックポイントから学習を再開")
def train_cli(config_path, overrides, show_config_flag, data_dir, variant, gan, epochs, seed, resume_from):
    """NUQ / 精度固定ベースラインの学習"""
    with handle_errors():
        extra = {"variant": variant, "gan": gan, "epochs": epochs, "seed": seed}
        cfg = load_config(TrainConfig, "train", config_path, overrides, extra=extra)
        if show_config_flag:
            show_config(cfg)
            return
        if not data_dir:
            raise ConfigError("--data でデータセットを指定してください", field="data")
        dataset = load_dataset(data_dir)

        label = "NUQ" if cfg.variant == "nuq" else "精度固定ベースライン"
        console.print(f"\n[bold cyan]{label} を学習します[/bold cyan]"
                      f"{' + GAN' if cfg.gan else ''}（{cfg.epochs} エポック, seed={cfg.seed}）")
        if resume_from:
            trainer = Trainer.from_checkpoint(resume_from, cfg, dataset)
        else:
            trainer = Trainer(cfg, dataset)
        result = trainer.fit()

    epochs_table = result.runlog.epochs()
    if len(epochs_table):
        table = Table(box=box.ROUNDED)
        table.add_column("epoch", style="cyan", justify="right")
        table.add_column("val SSIM", justify="right")
        table.add_column("val PSNR", justify="right")
        for _, row in epochs_table.iterrows():
            table.add_row(str(int(row["epoch"])), f"{row['val_ssim']:.4f}", f"{row['val_psnr']:.2f}")
        console.print(table)
    if result.checkpoint:
        console.print(f"[green]✓ チェックポイント: {result.checkpoint}[/green]")
    else:
        console.print("[yellow]チェックポイントは保存していません（検証のみ）[/yellow]")

    state = result.state
    best = f"{state.best_ssim:.6f}" if state.best_epoch else "nan"
    print_summary(command="train", variant=cfg.variant, gan=str(cfg.gan).lower(), epochs=state.epoch,
                  steps=state.step, best_ssim=best, best_epoch=state.best_epoch,
                  checkpoint=result.checkpoint or "none")

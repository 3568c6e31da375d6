"""
学習ループ

1 エポック = 学習用動画を 1 周（動画ごとにランダムな窓を 1 つ）。
乱数はすべて (seed, 用途, epoch, step) から導出するので、同じ設定・同じシードなら
損失の系列は完全に一致し、途中から resume しても同じ系列を続けられる。
学習率スケジュールは使わない。
"""
import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd
import torch

from ..data.batching import batch_iter
from ..data.models import VideoBatch, VideoDataset
from ..errors import ConfigError, NonFiniteLossError, NUQError
from ..evaluation.protocol import best_of_k_eval
from ..nuq.discriminator import SeqDiscriminator, gan_losses, sample_fake_windows, sample_real_windows
from ..nuq.distributions import make_hyperprior
from ..nuq.losses import LossBreakdown, fixed_precision_loss, nuq_loss
from ..nuq.model import NUQModel, RolloutRecord
from ..utils.log import get_logger
from ..utils.seeding import derive_seed, make_generator, resolve_device, seed_everything
from .checkpoint import (
    TrainerState,
    check_architecture,
    check_resume_compatible,
    load_checkpoint,
    save_checkpoint,
)
from .config import TrainConfig
from .runlog import RunLog

logger = get_logger("trainer")

# @1 / @5 の報告用に残すエポック
MILESTONE_EPOCHS = (1, 5)


@dataclass
class TrainResult:
    checkpoint: Optional[Path]          # 最終（last）チェックポイント
    best_checkpoint: Optional[Path]
    runlog: RunLog
    state: TrainerState


def param_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: VideoDataset, runlog: Optional[RunLog] = None):
        cfg.validate()
        dataset.validate()
        if not dataset.indices("train"):
            raise ConfigError("データセットに train 分割がありません", field="dataset")
        if cfg.train_len > dataset.seq_len:
            raise ConfigError(f"train_len ({cfg.train_len}) が動画長 T ({dataset.seq_len}) を超えています",
                              field="train_len")
        if cfg.context_frames + cfg.predict_len > dataset.seq_len:
            raise ConfigError(
                f"context_frames + predict_len ({cfg.context_frames + cfg.predict_len}) が"
                f"動画長 T ({dataset.seq_len}) を超えています",
                field="predict_len",
            )
        self.cfg = cfg
        self.dataset = dataset
        seed_everything(cfg.seed, cfg.num_threads)
        self.device = resolve_device(cfg.device or None)
        self.model_cfg = cfg.model_config(dataset.height)

        torch.manual_seed(derive_seed(cfg.seed, "model"))
        self.model = NUQModel(self.model_cfg).to(self.device)
        self.optimizers: dict[str, torch.optim.Optimizer] = {
            "model": torch.optim.Adam(self.model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2)),
        }
        self.discriminator: Optional[SeqDiscriminator] = None
        if cfg.gan:
            torch.manual_seed(derive_seed(cfg.seed, "discriminator"))
            self.discriminator = SeqDiscriminator(
                dataset.height, 1, cfg.base_width, cfg.num_levels, cfg.feature_dim, 256, cfg.k,
            ).to(self.device)
            self.optimizers["discriminator"] = torch.optim.Adam(
                self.discriminator.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2),
            )
        self.hyperprior = make_hyperprior(cfg.hyperprior, cfg.hyperprior_alpha, cfg.hyperprior_beta)
        self.state = TrainerState()
        self.runlog = runlog if runlog is not None else RunLog.create(cfg.log_path, cfg.seed)
        self.checkpoint_dir = Path(cfg.checkpoint_dir)

        val = dataset.indices("val") or dataset.indices("test")
        if not dataset.indices("val"):
            logger.warning("val 分割がないため test 分割で検証します")
        self.val_indices = val[:cfg.val_videos]

    # ─────────────────────────────────────────
    # 1 ステップ
    # ─────────────────────────────────────────

    def compute_loss(self, record: RolloutRecord, batch: VideoBatch) -> LossBreakdown:
        if self.cfg.variant == "fixed":
            return fixed_precision_loss(record, batch.targets, self.cfg.eta1)
        return nuq_loss(record, batch.targets, self.cfg.eta1, self.cfg.eta2, self.hyperprior)

    def _discriminator_step(self, batch: VideoBatch, record: RolloutRecord,
                            gen: torch.Generator) -> tuple[float, torch.Tensor, torch.Tensor]:
        disc = self.discriminator
        opt = self.optimizers["discriminator"]
        real = sample_real_windows(batch.frames, self.cfg.k, generator=gen)
        fake = sample_fake_windows(record.frames, self.cfg.k, generator=gen)
        before = param_digest(self.model.parameters()) if self.cfg.check_param_isolation else None

        disc_loss = torch.zeros(())
        for _ in range(self.cfg.disc_steps):
            opt.zero_grad(set_to_none=True)
            disc_loss, _ = gan_losses(disc(real.frames), disc(fake.frames.detach()))
            if not torch.isfinite(disc_loss):
                raise NonFiniteLossError(f"識別器の損失が非有限です（{float(disc_loss)}）")
            disc_loss.backward()
            opt.step()

        if before is not None and param_digest(self.model.parameters()) != before:
            raise NUQError("識別器の更新で生成側のパラメータが変化しました")
        return float(disc_loss.detach()), real.frames, fake.frames

    def train_step(self, batch: VideoBatch, epoch: int, index: int) -> LossBreakdown:
        cfg = self.cfg
        batch = batch.to(self.device)
        gen = make_generator(derive_seed(cfg.seed, "step", epoch, index), self.device)
        record = self.model.rollout_train(batch, generator=gen)
        breakdown = self.compute_loss(record, batch)

        disc_loss = None
        if self.discriminator is not None:
            disc_loss, real_frames, fake_frames = self._discriminator_step(batch, record, gen)
            with torch.no_grad():
                real_scores = self.discriminator(real_frames)
            _, gen_term = gan_losses(real_scores, self.discriminator(fake_frames))
            breakdown = breakdown.with_adversarial(gen_term, cfg.gamma)

        if not math.isfinite(float(breakdown.total.detach())):
            self._abort_nonfinite(breakdown, epoch)

        disc_before = (param_digest(self.discriminator.parameters())
                       if self.discriminator is not None and cfg.check_param_isolation else None)
        opt = self.optimizers["model"]
        opt.zero_grad(set_to_none=True)
        breakdown.total.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        opt.step()
        if disc_before is not None and param_digest(self.discriminator.parameters()) != disc_before:
            raise NUQError("生成側の更新で識別器のパラメータが変化しました")

        self.state.step += 1
        losses = breakdown.as_dict()
        self.runlog.log_step(self.state.step, epoch, losses, disc_loss)
        if self.state.step % cfg.log_every == 0:
            logger.info("epoch %d step %d: total=%.4f recon=%.4f -logb=%.4f kl=%.4f kl_s=%.4f",
                        epoch, self.state.step, losses["total"], losses["weighted_recon"],
                        losses["neg_log_precision"], losses["kl_latent"], losses["kl_hyper"])
        return breakdown

    def _abort_nonfinite(self, breakdown: LossBreakdown, epoch: int) -> None:
        ckpt = save_checkpoint(self.checkpoint_dir / "last_good.pt", self.cfg, self.model,
                               self.optimizers, self.state, self.discriminator)
        dump = pd.DataFrame({name: trace.cpu().numpy() for name, trace in breakdown.per_t.items()})
        dump.insert(0, "t", range(1, len(dump) + 1))
        dump["epoch"] = epoch
        dump["step"] = self.state.step + 1
        dump_path = self.checkpoint_dir / "nonfinite_dump.csv"
        dump.to_csv(dump_path, index=False)
        self.runlog.log_event(self.state.step, epoch, f"non-finite loss; dump={dump_path}")
        raise NonFiniteLossError(
            f"epoch {epoch} step {self.state.step + 1} で損失が非有限になりました: {breakdown.as_dict()}",
            checkpoint_path=str(ckpt),
            dump_path=str(dump_path),
        )

    # ─────────────────────────────────────────
    # エポック・検証
    # ─────────────────────────────────────────

    def train_epoch(self, epoch: int) -> None:
        self.model.train()
        if self.discriminator is not None:
            self.discriminator.train()
        batches = batch_iter(
            self.dataset, self.cfg.batch_size, self.cfg.context_frames, self.cfg.train_len,
            seed=derive_seed(self.cfg.seed, "epoch", epoch), split="train",
        )
        for index, batch in enumerate(batches):
            self.train_step(batch, epoch, index)

    def validate(self) -> tuple[float, float]:
        """検証用スライスで best-of-val_k の SSIM / PSNR"""
        report = best_of_k_eval(
            self.model, self.dataset, self.cfg.val_k, self.cfg.context_frames, self.cfg.predict_len,
            seed=derive_seed(self.cfg.seed, "validation"), indices=self.val_indices,
            batch_size=self.cfg.batch_size, device=self.device,
        )
        return report.mean_ssim, report.mean_psnr

    def save(self, name: str) -> Path:
        return save_checkpoint(self.checkpoint_dir / name, self.cfg, self.model, self.optimizers,
                               self.state, self.discriminator)

    def fit(self) -> TrainResult:
        cfg = self.cfg
        if self.state.epoch == 0:
            self.runlog.write_config(cfg)

        if cfg.epochs == 0:
            ssim, psnr = self.validate()
            self.runlog.log_epoch(self.state.step, 0, ssim, psnr)
            logger.info("validation only: SSIM=%.4f PSNR=%.2f", ssim, psnr)
            return TrainResult(None, None, self.runlog, self.state)

        last = best = None
        best_path = self.checkpoint_dir / "best.pt"
        if best_path.is_file() and self.state.best_epoch:
            best = best_path
        for epoch in range(self.state.epoch + 1, cfg.epochs + 1):
            started = time.perf_counter()
            self.train_epoch(epoch)
            ssim, psnr = self.validate()
            self.state.epoch = epoch
            self.state.val_history.append(ssim)
            improved = ssim > self.state.best_ssim
            if improved:
                self.state.best_ssim = ssim
                self.state.best_epoch = epoch
                self.state.epochs_since_best = 0
            else:
                self.state.epochs_since_best += 1
            self.runlog.log_epoch(self.state.step, epoch, ssim, psnr)
            logger.info("epoch %d/%d: val SSIM=%.4f PSNR=%.2f (%.1fs)%s", epoch, cfg.epochs, ssim, psnr,
                        time.perf_counter() - started, " *best" if improved else "")

            if epoch in MILESTONE_EPOCHS:
                self.save(f"epoch_{epoch:03d}.pt")
            if improved:
                best = self.save("best.pt")
            last = self.save("last.pt")

            if cfg.patience and self.state.epochs_since_best >= cfg.patience:
                logger.warning("検証 SSIM が %d エポック改善しないため終了します（epoch %d）", cfg.patience, epoch)
                self.runlog.log_event(self.state.step, epoch, f"early stop after {cfg.patience} epochs without improvement")
                break
        return TrainResult(last, best, self.runlog, self.state)

    # ─────────────────────────────────────────
    # resume
    # ─────────────────────────────────────────

    @classmethod
    def from_checkpoint(cls, path: str | Path, cfg: TrainConfig, dataset: VideoDataset) -> "Trainer":
        ckpt = load_checkpoint(path)
        check_resume_compatible(ckpt, cfg)
        trainer = cls(cfg, dataset, runlog=RunLog.create(cfg.log_path, cfg.seed, resume=True))
        check_architecture(trainer.model_cfg, ckpt.model_config)
        trainer.model.load_state_dict(ckpt.model)
        if trainer.discriminator is not None:
            trainer.discriminator.load_state_dict(ckpt.discriminator)
        for name, opt in trainer.optimizers.items():
            if name not in ckpt.optimizers:
                raise ConfigError(f"チェックポイントに最適化器 '{name}' の状態がありません", field=name)
            opt.load_state_dict(ckpt.optimizers[name])
        trainer.state = ckpt.trainer
        logger.info("resume: %s（epoch %d, step %d）", path, ckpt.trainer.epoch, ckpt.trainer.step)
        return trainer


def train_run(cfg: TrainConfig, dataset: VideoDataset) -> TrainResult:
    return Trainer(cfg, dataset).fit()


def resume(checkpoint: str | Path, cfg: TrainConfig, dataset: VideoDataset) -> TrainResult:
    return Trainer.from_checkpoint(checkpoint, cfg, dataset).fit()

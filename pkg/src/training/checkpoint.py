"""
チェックポイントの保存・読み込み

torch.save の辞書形式。ヘッダ（format_version・設定のエコー）と
名前空間ごとの state_dict（model / discriminator / optimizers）を持つ。
読み込みは weights_only=True で行うので、中身はテンソルと基本型だけにする。
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch

from ..config import config_diff, config_to_dict
from ..errors import ConfigError
from ..nuq.model import ARCHITECTURE_KEYS, ModelConfig, NUQModel
from ..utils.log import get_logger
from .config import RESUME_EXEMPT, TrainConfig

logger = get_logger("checkpoint")

FORMAT_VERSION = 1
DISCRIMINATOR_NAMESPACE = "discriminator"


@dataclass
class TrainerState:
    epoch: int = 0                  # 完了したエポック数
    step: int = 0                   # 通算ステップ数
    best_ssim: float = float("-inf")
    best_epoch: int = 0
    epochs_since_best: int = 0
    val_history: list[float] = field(default_factory=list)


@dataclass
class Checkpoint:
    path: Path
    format_version: int
    config: dict[str, str]
    model_config: ModelConfig
    model: dict[str, Any]
    optimizers: dict[str, Any]
    trainer: TrainerState
    discriminator: Optional[dict[str, Any]] = None


def save_checkpoint(
    path: str | Path,
    cfg: TrainConfig,
    model: NUQModel,
    optimizers: dict[str, torch.optim.Optimizer],
    state: TrainerState,
    discriminator: Optional[torch.nn.Module] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "model_config": dataclasses.asdict(model.cfg),
        "model": model.state_dict(),
        "optimizers": {name: opt.state_dict() for name, opt in optimizers.items()},
        "trainer": dataclasses.asdict(state),
    }
    if discriminator is not None:
        payload[DISCRIMINATOR_NAMESPACE] = discriminator.state_dict()
    # 途中で落ちても壊れたファイルを残さない
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, map_location: str | torch.device = "cpu") -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"チェックポイントが見つかりません: {path}")
    raw = torch.load(path, map_location=map_location, weights_only=True)
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"未対応のチェックポイント形式です（format_version={version}）: {path}",
                          field="checkpoint")
    return Checkpoint(
        path=path,
        format_version=version,
        config=dict(raw["config"]),
        model_config=ModelConfig(**raw["model_config"]),
        model=raw["model"],
        optimizers=raw.get("optimizers", {}),
        trainer=TrainerState(**raw["trainer"]),
        discriminator=raw.get(DISCRIMINATOR_NAMESPACE),
    )


def check_architecture(expected: ModelConfig, actual: ModelConfig) -> None:
    diff = config_diff(
        {k: str(getattr(expected, k)) for k in ARCHITECTURE_KEYS},
        {k: str(getattr(actual, k)) for k in ARCHITECTURE_KEYS},
        ARCHITECTURE_KEYS,
    )
    if diff:
        raise ConfigError("チェックポイントのモデル構成が一致しません: " + "; ".join(diff),
                          field=diff[0].split(":")[0])


def check_resume_compatible(ckpt: Checkpoint, cfg: TrainConfig) -> None:
    """resume できるか確認する（不一致はフィールドの差分付きで拒否）"""
    current = config_to_dict(cfg)
    keys = [k for k in current if k not in RESUME_EXEMPT]
    diff = config_diff(ckpt.config, current, keys)
    if diff:
        raise ConfigError("チェックポイントと設定が一致しないため再開できません: " + "; ".join(diff),
                          field=diff[0].split(":")[0])
    if cfg.gan and ckpt.discriminator is None:
        raise ConfigError(
            f"GAN 学習の再開には '{DISCRIMINATOR_NAMESPACE}' 名前空間が必要ですが、チェックポイントにありません",
            field=DISCRIMINATOR_NAMESPACE,
        )


def load_model(path: str | Path, expected: Optional[ModelConfig] = None,
               device: str | torch.device = "cpu") -> NUQModel:
    """評価・生成用にモデルだけを読み込む（eval モード）"""
    ckpt = load_checkpoint(path, map_location=device)
    if expected is not None:
        check_architecture(expected, ckpt.model_config)
    logger.debug("loaded %s (epoch=%d)", path, ckpt.trainer.epoch)
    return model_from_checkpoint(ckpt, device)


def model_from_checkpoint(ckpt: Checkpoint, device: str | torch.device = "cpu") -> NUQModel:
    model = NUQModel(ckpt.model_config)
    model.load_state_dict(ckpt.model)
    return model.to(device).eval()

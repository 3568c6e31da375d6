"""
学習ログ（RunLog）

ヘッダ付き CSV への追記のみ。1 行 = 1 レコード（kind = step / epoch / event）。
設定のエコーは同じディレクトリの config.txt に書く。
"""
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

import pandas as pd

from ..config import config_to_text
from ..nuq.losses import TERMS
from ..utils.log import get_logger

logger = get_logger("runlog")

COLUMNS = [
    "kind", "step", "epoch", "timestamp", "wall_clock", "seed",
    *TERMS, "total", "disc_loss", "val_ssim", "val_psnr", "message",
]
LOSS_COLUMNS = [*TERMS, "total", "disc_loss"]


@dataclass
class RunLog:
    path: Optional[Path] = None
    seed: int = 0
    records: list[dict] = field(default_factory=list)
    _started: float = field(init=False, default_factory=lambda: datetime.now().timestamp())
    _last_step: int = field(init=False, default=-1)

    @classmethod
    def create(cls, path: str | Path | None, seed: int, resume: bool = False) -> "RunLog":
        """resume=False なら既存ファイルを作り直す"""
        log = cls(Path(path) if path else None, seed)
        if log.path is None:
            return log
        log.path.parent.mkdir(parents=True, exist_ok=True)
        if log.path.exists():
            if resume:
                existing = load_runlog(log.path)
                steps = existing.loc[existing["kind"] == "step", "step"]
                if len(steps):
                    log._last_step = int(steps.max())
            else:
                logger.warning("既存の学習ログを上書きします: %s", log.path)
                log.path.unlink()
        return log

    def _append(self, row: dict) -> None:
        now = datetime.now()
        row = {
            "timestamp": now.isoformat(timespec="milliseconds"),
            "wall_clock": round(now.timestamp() - self._started, 3),
            "seed": self.seed,
            **row,
        }
        self.records.append(row)
        if self.path is None:
            return
        frame = pd.DataFrame([row], columns=COLUMNS)
        frame.to_csv(self.path, mode="a", header=not self.path.exists(), index=False, float_format="%.10g")

    def log_step(self, step: int, epoch: int, losses: dict[str, float],
                 disc_loss: Optional[float] = None) -> None:
        if step <= self._last_step:
            raise ValueError(f"ステップ番号が単調増加していません: {step} <= {self._last_step}")
        self._last_step = step
        self._append({"kind": "step", "step": step, "epoch": epoch, **losses, "disc_loss": disc_loss})

    def log_epoch(self, step: int, epoch: int, val_ssim: float, val_psnr: float) -> None:
        self._append({"kind": "epoch", "step": step, "epoch": epoch, "val_ssim": val_ssim, "val_psnr": val_psnr})

    def log_event(self, step: int, epoch: int, message: str) -> None:
        self._append({"kind": "event", "step": step, "epoch": epoch, "message": message})

    def write_config(self, cfg) -> Optional[Path]:
        if self.path is None:
            return None
        echo = self.path.with_name("config.txt")
        echo.write_text(config_to_text(cfg), encoding="utf-8")
        return echo

    def steps(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records, columns=COLUMNS)
        return frame[frame["kind"] == "step"].reset_index(drop=True)

    def epochs(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records, columns=COLUMNS)
        return frame[frame["kind"] == "epoch"].reset_index(drop=True)


def load_runlog(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)

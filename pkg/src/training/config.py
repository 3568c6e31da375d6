"""学習設定"""
from dataclasses import dataclass

from ..errors import ConfigError
from ..nuq.distributions import S_MIN, VALID_HYPERPRIORS
from ..nuq.model import ModelConfig

VALID_VARIANTS = ["nuq", "fixed"]

# resume 時に一致を求めないキー（実行時間・出力先・実行環境）
RESUME_EXEMPT = {"epochs", "patience", "checkpoint_dir", "log_path", "num_threads", "device",
                 "check_param_isolation", "log_every"}


@dataclass
class TrainConfig:
    variant: str = "nuq"             # "nuq" | "fixed"
    gan: bool = False
    eta1: float = 1e-4
    eta2: float = 1e-3
    gamma: float = 1e-5
    k: int = 3
    lr: float = 0.002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 30
    context_frames: int = 5
    train_len: int = 15              # 学習窓の長さ（観測 + 予測）
    predict_len: int = 10            # 検証時の予測フレーム数
    latent_dim: int = 10
    feature_dim: int = 128
    hidden_dim: int = 256
    base_width: int = 64
    num_levels: int = 0              # 0 = 画像サイズから自動
    hyperprior: str = "gamma"        # gamma | uniform | halfnormal
    hyperprior_alpha: float = 2.0
    hyperprior_beta: float = 1.0
    s_min: float = S_MIN
    detach_prior_variance: bool = False
    grad_clip: float = 5.0           # 0 で無効
    disc_steps: int = 1
    val_videos: int = 50
    val_k: int = 10
    patience: int = 10               # 0 で早期終了なし
    seed: int = 0
    checkpoint_dir: str = "runs/nuq/checkpoints"
    log_path: str = "runs/nuq/runlog.csv"
    log_every: int = 10
    num_threads: int = 1
    device: str = ""                 # 空なら NUQ_DEVICE（既定 cpu）
    check_param_isolation: bool = False

    def validate(self) -> None:
        if self.variant not in VALID_VARIANTS:
            raise ConfigError(f"variant は {VALID_VARIANTS} のいずれかを指定してください", field="variant")
        if self.hyperprior not in VALID_HYPERPRIORS:
            raise ConfigError(f"hyperprior は {VALID_HYPERPRIORS} のいずれかを指定してください", field="hyperprior")
        for name in ("eta1", "eta2", "gamma", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} は 0 以上を指定してください", field=name)
        if not self.lr > 0:
            raise ConfigError("lr は正の値が必要です", field="lr")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam_beta1 / adam_beta2 は [0, 1) の範囲です", field="adam_beta1")
        if self.context_frames < 1:
            raise ConfigError("context_frames は 1 以上を指定してください", field="context_frames")
        if self.train_len <= self.context_frames:
            raise ConfigError("train_len は context_frames より大きくしてください", field="train_len")
        for name in ("k", "batch_size", "predict_len", "latent_dim", "feature_dim", "hidden_dim",
                     "base_width", "disc_steps", "val_videos", "val_k", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} は 1 以上を指定してください", field=name)
        if self.gan and self.train_len - self.context_frames < self.k:
            raise ConfigError(
                f"GAN の窓長 k={self.k} が予測フレーム数 {self.train_len - self.context_frames} を超えています",
                field="k",
            )
        for name in ("epochs", "patience", "num_levels", "num_threads"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} は 0 以上を指定してください", field=name)
        if not self.s_min > 0:
            raise ConfigError("s_min は正の値が必要です", field="s_min")

    def model_config(self, image_size: int, channels: int = 1) -> ModelConfig:
        cfg = ModelConfig(
            image_size=image_size,
            channels=channels,
            base_width=self.base_width,
            num_levels=self.num_levels,
            feature_dim=self.feature_dim,
            latent_dim=self.latent_dim,
            hidden_dim=self.hidden_dim,
            s_min=self.s_min,
            detach_prior_variance=self.detach_prior_variance,
        )
        cfg.validate()
        return cfg

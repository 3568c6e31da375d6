"""
NUQ モデル本体

学習時（rollout_train）は事後分布 q_φ から z_t を引き、予測器には常に正解の前フレームを
与える（teacher forcing）。生成時（rollout_generate）は事後分布を使わず事前分布 p_ψ から
z_t を引き、予測器には自分の出力フレームを戻す。どちらも各予測ステップで
事前分布の分散から切断正規分布を作って s_t を引き、精度 b_t = 1/s_t を記録する。
"""
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import Tensor, nn

from ..data.models import VideoBatch
from ..errors import ConfigError, ShapeError
from ..utils.seeding import derive_seed, make_generator
from .distributions import (
    S_MIN,
    GaussianParams,
    TruncNormalParams,
    reparam_gaussian_sample,
    sample_trunc_normal,
    trunc_normal_noise,
)
from .networks import (
    FrameDecoder,
    FrameEncoder,
    GaussianLSTM,
    LSTMState,
    PredictorLSTM,
    VarianceEncoder,
    auto_num_levels,
)

# チェックポイントで一致を確認するアーキテクチャ項目
ARCHITECTURE_KEYS = [
    "image_size", "channels", "base_width", "num_levels", "feature_dim", "latent_dim",
    "hidden_dim", "predictor_layers", "prior_layers", "posterior_layers", "variance_hidden",
]


@dataclass
class ModelConfig:
    image_size: int = 48
    channels: int = 1
    base_width: int = 64
    num_levels: int = 0          # 0 = image_size から自動決定
    feature_dim: int = 128
    latent_dim: int = 10
    hidden_dim: int = 256
    predictor_layers: int = 2
    prior_layers: int = 1
    posterior_layers: int = 1
    variance_hidden: int = 64
    s_min: float = S_MIN
    detach_prior_variance: bool = False

    @property
    def levels(self) -> int:
        return self.num_levels or auto_num_levels(self.image_size)

    def validate(self) -> None:
        for name in ("image_size", "channels", "base_width", "feature_dim", "latent_dim",
                     "hidden_dim", "predictor_layers", "prior_layers", "posterior_layers", "variance_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} は 1 以上を指定してください", field=name)
        if self.num_levels < 0:
            raise ConfigError("num_levels は 0（自動）以上を指定してください", field="num_levels")
        if self.image_size % (2 ** self.levels) != 0:
            raise ConfigError(
                f"image_size={self.image_size} が 2^{self.levels} で割り切れません", field="num_levels"
            )
        if not self.s_min > 0:
            raise ConfigError("s_min は正の値が必要です", field="s_min")


@dataclass
class RolloutNoise:
    """ロールアウトで使った乱数（同じノイズで再実行すると同じ結果になる）"""
    z: Tensor          # [B, T-1, g] 各遷移の標準正規ノイズ
    trunc: Tensor      # [B, S] 受理された切断正規ノイズ


@dataclass
class RolloutRecord:
    """予測ステップ t = F+1..T の記録（S = T − F ステップ）"""
    frames: Tensor                       # x̂_t [B, S, C, H, W]
    prior: GaussianParams                # [B, S, g]
    posterior: Optional[GaussianParams]  # [B, S, g]（生成時は None）
    z: Tensor                            # [B, S, g]
    trunc: TruncNormalParams             # [B, S]
    s: Tensor                            # [B, S]
    b: Tensor                            # [B, S] = 1/s
    context_frames: int = 0
    noise: Optional[RolloutNoise] = None
    hidden: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(self.frames.shape[1])


@dataclass
class GenerationResult:
    frames: Tensor     # [K, B, steps, C, H, W]
    s: Tensor          # [K, B, steps] 不確かさトレース
    b: Tensor          # [K, B, steps]

    @property
    def num_futures(self) -> int:
        return int(self.frames.shape[0])


def _stack_gaussians(items: list[GaussianParams]) -> GaussianParams:
    return GaussianParams(torch.stack([p.mean for p in items], 1), torch.stack([p.variance for p in items], 1))


class NUQModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        levels = cfg.levels
        self.encoder = FrameEncoder(cfg.image_size, cfg.channels, cfg.base_width, levels, cfg.feature_dim)
        self.decoder = FrameDecoder(cfg.image_size, cfg.channels, cfg.base_width, levels, cfg.hidden_dim)
        self.predictor = PredictorLSTM(cfg.feature_dim, cfg.latent_dim, cfg.hidden_dim, cfg.predictor_layers)
        self.prior = GaussianLSTM(cfg.feature_dim, cfg.hidden_dim, cfg.latent_dim, cfg.prior_layers)
        self.posterior = GaussianLSTM(cfg.feature_dim, cfg.hidden_dim, cfg.latent_dim, cfg.posterior_layers)
        self.variance_encoder = VarianceEncoder(cfg.latent_dim, cfg.variance_hidden)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """θ（フレーム系・予測器）, φ（事後）, ψ（事前）, λ（分散エンコーダ）"""
        return {
            "theta": [*self.encoder.parameters(), *self.decoder.parameters(), *self.predictor.parameters()],
            "phi": list(self.posterior.parameters()),
            "psi": list(self.prior.parameters()),
            "lambda": list(self.variance_encoder.parameters()),
        }

    # ─────────────────────────────────────────
    # 1 ステップ単位の操作
    # ─────────────────────────────────────────

    def encode_frame(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        return self.encoder(x)

    def decode_frame(self, h: Tensor, skips: list[Tensor]) -> Tensor:
        return self.decoder(h, skips)

    def prior_step(self, state: LSTMState, prev_feature: Tensor) -> tuple[GaussianParams, LSTMState]:
        return self.prior(prev_feature, state)

    def posterior_step(self, state: LSTMState, feature: Tensor) -> tuple[GaussianParams, LSTMState]:
        return self.posterior(feature, state)

    def predictor_step(self, state: LSTMState, prev_feature: Tensor, z: Tensor) -> tuple[Tensor, LSTMState]:
        return self.predictor(prev_feature, z, state)

    def variance_encode(self, prior_variance: Tensor) -> TruncNormalParams:
        return self.variance_encoder(prior_variance)

    def init_states(self, batch: int, like: Tensor) -> tuple[LSTMState, LSTMState, LSTMState]:
        kw = dict(device=like.device, dtype=like.dtype)
        return (
            self.predictor.init_state(batch, **kw),
            self.prior.init_state(batch, **kw),
            self.posterior.init_state(batch, **kw),
        )

    def _encode_sequence(self, frames: Tensor) -> tuple[Tensor, list[Tensor]]:
        if frames.dim() != 5:
            raise ShapeError(f"フレーム列は [B, T, C, H, W] が必要です（実際: {tuple(frames.shape)}）")
        b, t = frames.shape[:2]
        feats, skips = self.encode_frame(frames.reshape(b * t, *frames.shape[2:]))
        return feats.view(b, t, -1), [s.view(b, t, *s.shape[1:]) for s in skips]

    # ─────────────────────────────────────────
    # ロールアウト
    # ─────────────────────────────────────────

    def rollout_train(
        self,
        batch: VideoBatch | Tensor,
        seed: Optional[int] = None,
        *,
        context_frames: Optional[int] = None,
        generator: Optional[torch.Generator] = None,
        noise: Optional[RolloutNoise] = None,
    ) -> RolloutRecord:
        """teacher forcing の学習ロールアウト（t <= F は損失なしのウォームアップ）

        batch は VideoBatch か [B, T, C, H, W] のテンソル（その場合は context_frames 必須）。
        noise を渡すと乱数を引かずにその値を使う。
        """
        if isinstance(batch, VideoBatch):
            frames = batch.frames
            context_frames = batch.context_frames if context_frames is None else context_frames
        else:
            frames = batch
        if context_frames is None:
            raise ConfigError("context_frames を指定してください", field="context_frames")
        bsz, total = frames.shape[:2]
        if not 1 <= context_frames < total:
            raise ConfigError(
                f"context_frames={context_frames} は 1 以上 T={total} 未満が必要です", field="context_frames"
            )
        cfg = self.cfg
        feats, skips = self._encode_sequence(frames)
        # スキップ接続は最後の観測フレームのものを固定で使う
        skip_ctx = [s[:, context_frames - 1] for s in skips]

        if generator is None and seed is not None:
            generator = make_generator(seed, frames.device)
        if noise is None:
            z_noise = torch.randn((bsz, total - 1, cfg.latent_dim), generator=generator,
                                  dtype=feats.dtype, device=feats.device)
        else:
            z_noise = noise.z

        pred_state, prior_state, post_state = self.init_states(bsz, feats)
        outs, priors, posts, zs, alphas, betas, ss, eps_all = [], [], [], [], [], [], [], []

        for t in range(1, total):
            p, prior_state = self.prior_step(prior_state, feats[:, t - 1])
            q, post_state = self.posterior_step(post_state, feats[:, t])
            z = reparam_gaussian_sample(q, z_noise[:, t - 1])
            out, pred_state = self.predictor_step(pred_state, feats[:, t - 1], z)
            if t < context_frames:
                continue

            variance = p.variance.detach() if cfg.detach_prior_variance else p.variance
            tn = self.variance_encode(variance)
            if noise is None:
                eps = trunc_normal_noise(tn, generator, s_min=cfg.s_min)
            else:
                eps = noise.trunc[:, t - context_frames]
            s = sample_trunc_normal(tn, noise=eps)

            outs.append(self.decode_frame(out, skip_ctx))
            priors.append(p)
            posts.append(q)
            zs.append(z)
            alphas.append(tn.alpha)
            betas.append(tn.beta)
            ss.append(s)
            eps_all.append(eps)

        s_all = torch.stack(ss, 1)
        return RolloutRecord(
            frames=torch.stack(outs, 1),
            prior=_stack_gaussians(priors),
            posterior=_stack_gaussians(posts),
            z=torch.stack(zs, 1),
            trunc=TruncNormalParams(torch.stack(alphas, 1), torch.stack(betas, 1)),
            s=s_all,
            b=1.0 / s_all,
            context_frames=context_frames,
            noise=RolloutNoise(z=z_noise, trunc=torch.stack(eps_all, 1)),
            hidden={"predictor": pred_state, "prior": prior_state, "posterior": post_state},
        )

    @torch.no_grad()
    def rollout_generate(self, context: Tensor, steps: int, num_futures: int = 1, seed: int = 0) -> GenerationResult:
        """事前分布からの自己回帰生成（事後分布は使わない）

        context は [F, C, H, W] または [B, F, C, H, W]。
        future k の乱数は derive_seed(seed, k) から作るので、K を増やしても
        先頭の future は変わらない。
        """
        if steps < 1:
            raise ConfigError("steps は 1 以上を指定してください", field="steps")
        if num_futures < 1:
            raise ConfigError("num_futures は 1 以上を指定してください", field="K")
        single = context.dim() == 4
        if single:
            context = context.unsqueeze(0)
        bsz, ctx_len = context.shape[:2]
        cfg = self.cfg

        was_training = self.training
        self.eval()
        try:
            feats, skips = self._encode_sequence(context)
            skip_ctx = [s[:, ctx_len - 1] for s in skips]
            all_frames, all_s = [], []
            for k in range(num_futures):
                gen = make_generator(derive_seed(seed, "future", k), context.device)
                pred_state, prior_state, _ = self.init_states(bsz, feats)
                randn = lambda: torch.randn((bsz, cfg.latent_dim), generator=gen,  # noqa: E731
                                            dtype=feats.dtype, device=feats.device)

                for t in range(1, ctx_len):
                    p, prior_state = self.prior_step(prior_state, feats[:, t - 1])
                    z = reparam_gaussian_sample(p, randn())
                    _, pred_state = self.predictor_step(pred_state, feats[:, t - 1], z)

                prev = feats[:, ctx_len - 1]
                frames, traces = [], []
                for _ in range(steps):
                    p, prior_state = self.prior_step(prior_state, prev)
                    z = reparam_gaussian_sample(p, randn())
                    tn = self.variance_encode(p.variance)
                    s = sample_trunc_normal(tn, generator=gen, s_min=cfg.s_min)
                    out, pred_state = self.predictor_step(pred_state, prev, z)
                    x_hat = self.decode_frame(out, skip_ctx)
                    prev, _ = self.encode_frame(x_hat)
                    frames.append(x_hat)
                    traces.append(s)
                all_frames.append(torch.stack(frames, 1))
                all_s.append(torch.stack(traces, 1))
        finally:
            self.train(was_training)

        frames_t = torch.stack(all_frames)
        s_t = torch.stack(all_s)
        if single:
            frames_t, s_t = frames_t[:, 0:1], s_t[:, 0:1]
        return GenerationResult(frames=frames_t, s=s_t, b=1.0 / s_t)

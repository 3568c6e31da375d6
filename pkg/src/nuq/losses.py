"""
NUQ の損失関数

各予測ステップの項は ½(b_t‖x̂_t − x_t‖² − log b_t) + η₁ KL(q_φ‖p_ψ) + η₂ KL(q_λ‖p(s))。
二乗誤差は画素の総和、スカラー値は「時間方向の和」のバッチ平均。
b_t は s_t から決定的に決まるので、デコーダ経由の −log p(b|s,Σ) 項は入れない。
"""
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import Tensor

from ..errors import ShapeError
from .distributions import AnyHyperprior, GammaHyperprior, kl_diag_gaussian, kl_hyper_sample
from .model import RolloutRecord

TERMS = ["weighted_recon", "neg_log_precision", "kl_latent", "kl_hyper", "adv"]


@dataclass
class LossBreakdown:
    weighted_recon: Tensor
    neg_log_precision: Tensor
    kl_latent: Tensor
    kl_hyper: Tensor
    adv: Tensor
    total: Tensor
    eta1: float = 0.0
    eta2: float = 0.0
    gamma: float = 0.0
    # 各項のステップごとのバッチ平均 [S]
    per_t: dict[str, Tensor] = field(default_factory=dict)

    def recompose(self) -> Tensor:
        return (self.weighted_recon + self.neg_log_precision + self.eta1 * self.kl_latent
                + self.eta2 * self.kl_hyper - self.gamma * self.adv)

    def with_adversarial(self, gen_term: Tensor, gamma: float) -> "LossBreakdown":
        """L = L^P − γ·gen_term を組み立て直す（γ = 0 なら total は変わらない）"""
        adv = gen_term.reshape(())
        total = self.total - gamma * adv if gamma else self.total
        return LossBreakdown(
            self.weighted_recon, self.neg_log_precision, self.kl_latent, self.kl_hyper,
            adv, total, self.eta1, self.eta2, gamma, dict(self.per_t),
        )

    def as_dict(self) -> dict[str, float]:
        out = {name: float(getattr(self, name).detach()) for name in TERMS}
        out["total"] = float(self.total.detach())
        return out


def _check_aligned(rollout: RolloutRecord, targets: Tensor) -> None:
    if tuple(rollout.frames.shape) != tuple(targets.shape):
        raise ShapeError(
            f"予測フレーム {tuple(rollout.frames.shape)} と正解フレーム {tuple(targets.shape)} の形状が一致しません"
        )


def _squared_error(rollout: RolloutRecord, targets: Tensor) -> Tensor:
    """[B, S] ごとの画素二乗誤差の総和"""
    diff = rollout.frames - targets.to(rollout.frames.dtype)
    return diff.pow(2).flatten(2).sum(-1)


def _breakdown(parts: dict[str, Tensor], eta1: float, eta2: float) -> LossBreakdown:
    """[B, S] の各項からスカラー値とステップごとのトレースを作る"""
    scalars = {name: t.sum(1).mean() for name, t in parts.items()}
    total = (scalars["weighted_recon"] + scalars["neg_log_precision"]
             + eta1 * scalars["kl_latent"] + eta2 * scalars["kl_hyper"])
    return LossBreakdown(
        weighted_recon=scalars["weighted_recon"],
        neg_log_precision=scalars["neg_log_precision"],
        kl_latent=scalars["kl_latent"],
        kl_hyper=scalars["kl_hyper"],
        adv=torch.zeros((), dtype=total.dtype, device=total.device),
        total=total,
        eta1=eta1,
        eta2=eta2,
        per_t={name: t.detach().mean(0) for name, t in parts.items()},
    )


def nuq_loss(
    rollout: RolloutRecord,
    targets: Tensor,
    eta1: float = 1e-4,
    eta2: float = 1e-3,
    hyperprior: Optional[AnyHyperprior] = None,
) -> LossBreakdown:
    _check_aligned(rollout, targets)
    if rollout.posterior is None:
        raise ShapeError("学習ロールアウト（事後分布あり）の記録が必要です")
    hyperprior = hyperprior or GammaHyperprior()
    e2 = _squared_error(rollout, targets)
    parts = {
        "weighted_recon": 0.5 * rollout.b * e2,
        "neg_log_precision": -0.5 * torch.log(rollout.b),
        "kl_latent": kl_diag_gaussian(rollout.posterior, rollout.prior),
        "kl_hyper": kl_hyper_sample(rollout.s, rollout.trunc, hyperprior),
    }
    return _breakdown(parts, eta1, eta2)


def fixed_precision_loss(rollout: RolloutRecord, targets: Tensor, eta1: float = 1e-4) -> LossBreakdown:
    """b_t = 1 固定のベースライン ELBO（½‖x̂−x‖² + η₁ KL）"""
    _check_aligned(rollout, targets)
    if rollout.posterior is None:
        raise ShapeError("学習ロールアウト（事後分布あり）の記録が必要です")
    e2 = _squared_error(rollout, targets)
    zeros = torch.zeros_like(e2)
    parts = {
        "weighted_recon": 0.5 * e2,
        "neg_log_precision": zeros,
        "kl_latent": kl_diag_gaussian(rollout.posterior, rollout.prior),
        "kl_hyper": zeros,
    }
    return _breakdown(parts, eta1, 0.0)

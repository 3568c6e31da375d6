"""
確率分布の部品

- 対角ガウス（潜在変数 z_t の事前・事後）
- 正側に切断した正規分布（分散スケール s_t の近似事後）
- s_t への超事前分布（ガンマ：shape–rate 規約 / 一様 / 半正規）

すべての関数は乱数を明示的に受け取り、共有状態を持たない。
"""
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Union

import torch
from torch import Tensor
from torch.distributions import Gamma, HalfNormal, Normal, kl_divergence

from ..errors import ConfigError, DomainError, SamplingStarvationError, ShapeError
from ..utils.seeding import make_generator

S_MIN = 1e-3
MAX_RETRIES = 100
LOGVAR_CLAMP = (-10.0, 10.0)

VALID_HYPERPRIORS = ["gamma", "uniform", "halfnormal"]


# ─────────────────────────────────────────
# 対角ガウス
# ─────────────────────────────────────────

@dataclass
class GaussianParams:
    mean: Tensor       # [..., g]
    variance: Tensor   # [..., g] 正の値

    @classmethod
    def from_logvar(cls, mean: Tensor, logvar: Tensor,
                    clamp: tuple[float, float] = LOGVAR_CLAMP) -> "GaussianParams":
        return cls(mean, torch.exp(torch.clamp(logvar, *clamp)))

    def validate(self) -> None:
        if self.mean.shape != self.variance.shape:
            raise ShapeError(f"mean {tuple(self.mean.shape)} と variance {tuple(self.variance.shape)} の形状が違います")
        if not torch.isfinite(self.mean).all() or not torch.isfinite(self.variance).all():
            raise DomainError("GaussianParams に非有限値が含まれています")
        if (self.variance <= 0).any():
            raise DomainError("variance は正の値が必要です")

    def detach(self) -> "GaussianParams":
        return GaussianParams(self.mean.detach(), self.variance.detach())


def reparam_gaussian_sample(p: GaussianParams, noise: Tensor) -> Tensor:
    """z = mean + sqrt(variance) * noise"""
    if noise.shape != p.mean.shape:
        raise ShapeError(f"noise の形状 {tuple(noise.shape)} が潜在次元 {tuple(p.mean.shape)} と一致しません")
    return p.mean + torch.sqrt(p.variance) * noise


def kl_diag_gaussian(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q‖p) を最終次元で合計した値（閉形式）"""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"q {tuple(q.mean.shape)} と p {tuple(p.mean.shape)} の次元が違います")
    q.validate()
    p.validate()
    kl = kl_divergence(Normal(q.mean, torch.sqrt(q.variance)), Normal(p.mean, torch.sqrt(p.variance)))
    return kl.sum(dim=-1)


# ─────────────────────────────────────────
# 切断正規分布
# ─────────────────────────────────────────

@dataclass
class TruncNormalParams:
    alpha: Tensor   # 位置（切断前の平均）>= 0
    beta: Tensor    # スケール > 0

    def validate(self) -> None:
        if self.alpha.shape != self.beta.shape:
            raise ShapeError("alpha と beta の形状が違います")
        if not torch.isfinite(self.alpha).all() or not torch.isfinite(self.beta).all():
            raise DomainError("TruncNormalParams に非有限値が含まれています")
        if (self.alpha < 0).any():
            raise DomainError("alpha は 0 以上が必要です")
        if (self.beta <= 0).any():
            raise DomainError("beta は正の値が必要です")


def trunc_normal_noise(
    p: TruncNormalParams,
    generator: Optional[torch.Generator] = None,
    sample_shape: tuple[int, ...] = (),
    s_min: float = S_MIN,
    max_retries: int = MAX_RETRIES,
) -> Tensor:
    """alpha + beta * eps >= s_min となる標準正規ノイズ eps を棄却サンプリングで引く"""
    alpha = p.alpha.detach()
    beta = p.beta.detach()
    shape = tuple(sample_shape) + tuple(alpha.shape)
    kwargs = dict(generator=generator, dtype=alpha.dtype, device=alpha.device)

    eps = torch.randn(shape, **kwargs)
    # 下限 s_min で棄却するが、trunc_normal_logpdf の正規化は [0, ∞) のまま（s_min 分は無視）
    accepted = alpha + beta * eps >= s_min
    retries = 0
    while not bool(accepted.all()):
        if retries >= max_retries:
            rejected = int((~accepted).sum())
            raise SamplingStarvationError(
                f"切断正規分布のサンプリングが {max_retries} 回の再試行で受理されませんでした"
                f"（未受理 {rejected} 件, s_min={s_min}）"
            )
        eps = torch.where(accepted, eps, torch.randn(shape, **kwargs))
        accepted = alpha + beta * eps >= s_min
        retries += 1
    return eps


def sample_trunc_normal(
    p: TruncNormalParams,
    seed: Optional[int] = None,
    *,
    generator: Optional[torch.Generator] = None,
    noise: Optional[Tensor] = None,
    sample_shape: tuple[int, ...] = (),
    s_min: float = S_MIN,
    max_retries: int = MAX_RETRIES,
) -> Tensor:
    """s = alpha + beta * eps（受理された eps は定数として微分する）

    noise を渡すと棄却判定をせずにそのまま使う（勾配チェック用の固定ノイズ）。
    受理確率の勾配項は無視しているので、勾配にはわずかなバイアスが残る。
    """
    if noise is None:
        if generator is None and seed is not None:
            generator = make_generator(seed, p.alpha.device)
        noise = trunc_normal_noise(p, generator, sample_shape, s_min, max_retries)
    return p.alpha + p.beta * noise


def trunc_normal_logpdf(s: Tensor, p: TruncNormalParams) -> Tensor:
    """[0, ∞) に正規化した正規分布の対数密度"""
    s = torch.as_tensor(s, dtype=p.alpha.dtype, device=p.alpha.device)
    if (s <= 0).any():
        raise DomainError("trunc_normal_logpdf: s は正の値が必要です")
    return Normal(p.alpha, p.beta).log_prob(s) - torch.special.log_ndtr(p.alpha / p.beta)


# ─────────────────────────────────────────
# 超事前分布
# ─────────────────────────────────────────

class Hyperprior(Protocol):
    def log_prob(self, s: Tensor) -> Tensor: ...
    def validate(self) -> None: ...


@dataclass(frozen=True)
class GammaHyperprior:
    """ガンマ分布（shape–rate: 密度 ∝ s^{α−1} e^{−βs}）"""
    alpha: float = 2.0
    beta: float = 1.0

    def validate(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("ガンマ超事前分布の shape / rate は正の値が必要です", field="hyperprior_alpha")

    def log_prob(self, s: Tensor) -> Tensor:
        conc = torch.as_tensor(self.alpha, dtype=s.dtype, device=s.device)
        rate = torch.as_tensor(self.beta, dtype=s.dtype, device=s.device)
        return Gamma(conc, rate, validate_args=False).log_prob(s)


@dataclass(frozen=True)
class UniformHyperprior:
    """[low, high] 上の一様分布

    s_min 以上に切断した事後サンプルが high を超えることがあるため、
    密度はサンプルの位置によらず一定値 −log(high−low) として扱う。
    """
    low: float = 0.0
    high: float = 1.0

    def validate(self) -> None:
        if not self.high > self.low:
            raise ConfigError("一様超事前分布は high > low が必要です", field="hyperprior")

    def log_prob(self, s: Tensor) -> Tensor:
        return torch.full_like(s, -math.log(self.high - self.low))


@dataclass(frozen=True)
class HalfNormalHyperprior:
    scale: float = 1.0

    def validate(self) -> None:
        if not self.scale > 0:
            raise ConfigError("半正規超事前分布の scale は正の値が必要です", field="hyperprior")

    def log_prob(self, s: Tensor) -> Tensor:
        scale = torch.as_tensor(self.scale, dtype=s.dtype, device=s.device)
        return HalfNormal(scale, validate_args=False).log_prob(s)


AnyHyperprior = Union[GammaHyperprior, UniformHyperprior, HalfNormalHyperprior]


def make_hyperprior(name: str, alpha: float = 2.0, beta: float = 1.0) -> AnyHyperprior:
    if name == "gamma":
        prior: AnyHyperprior = GammaHyperprior(alpha, beta)
    elif name == "uniform":
        prior = UniformHyperprior(0.0, 1.0)
    elif name == "halfnormal":
        prior = HalfNormalHyperprior(1.0)
    else:
        raise ConfigError(f"hyperprior は {VALID_HYPERPRIORS} のいずれかを指定してください", field="hyperprior")
    prior.validate()
    return prior


def gamma_logpdf(s: Tensor, h: GammaHyperprior) -> Tensor:
    """α log β − log Γ(α) + (α−1) log s − β s"""
    s = torch.as_tensor(s, dtype=torch.get_default_dtype()) if not isinstance(s, Tensor) else s
    if (s <= 0).any():
        raise DomainError("gamma_logpdf: s は正の値が必要です")
    h.validate()
    return h.log_prob(s)


def kl_hyper_sample(s: Tensor, q: TruncNormalParams, h: Hyperprior) -> Tensor:
    """1 サンプルでの KL(q_λ‖p(s)) 推定値 log q(s) − log p(s)"""
    if (s <= 0).any():
        raise DomainError("s は正の値が必要です")
    return trunc_normal_logpdf(s, q) - h.log_prob(s)


def kl_truncnorm_gamma(
    q: TruncNormalParams,
    h: Hyperprior,
    num_samples: int,
    seed: Optional[int] = None,
    *,
    generator: Optional[torch.Generator] = None,
    s_min: float = S_MIN,
) -> Tensor:
    """KL(q_λ‖p(s)) のモンテカルロ推定（再パラメータ化サンプルで平均）"""
    if num_samples < 1:
        raise ConfigError("num_samples は 1 以上を指定してください", field="num_samples")
    s = sample_trunc_normal(q, seed, generator=generator, sample_shape=(num_samples,), s_min=s_min)
    return kl_hyper_sample(s, q, h).mean(dim=0)

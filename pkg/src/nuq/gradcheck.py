"""
有限差分による勾配チェック

乱数はすべて最初のロールアウトで記録したものを再利用する（ε と棄却結果を固定）。
倍精度で評価し、勾配の絶対値が小さすぎる要素は相対誤差が意味を持たないため数えない。
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch
from torch import Tensor, nn

from ..errors import ConfigError, NonFiniteLossError
from ..utils.log import get_logger
from .distributions import make_hyperprior
from .losses import fixed_precision_loss, nuq_loss
from .model import ModelConfig, NUQModel

logger = get_logger("gradcheck")

# 8x8 フレーム・g=4・隠れ層 16 の小型構成
TINY_MODEL = ModelConfig(
    image_size=8,
    channels=1,
    base_width=2,
    num_levels=0,
    feature_dim=8,
    latent_dim=4,
    hidden_dim=16,
    variance_hidden=8,
)


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str = ""
    errors: list[float] = field(default_factory=list)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, nn.Parameter]],
    eps: float = 1e-6,
    per_tensor: int = 2,
    min_grad: float = 1e-4,
    seed: int = 0,
) -> GradCheckResult:
    """解析勾配と中心差分の最大相対誤差 |a − fd| / (|fd| + 1e−8)

    各パラメータテンソルから per_tensor 個の要素を選んで比較する。
    """
    if eps <= 0:
        raise ConfigError("eps は正の値が必要です", field="eps")
    params = list(params)
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"勾配チェック: 損失が非有限です（{float(loss)}）")
    loss.backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for name, p in params}

    gen = torch.Generator().manual_seed(seed)
    result = GradCheckResult(max_rel_error=0.0, checked=0, skipped=0)
    with torch.no_grad():
        for name, p in params:
            flat = p.data.view(-1)
            picks = torch.randperm(flat.numel(), generator=gen)[:per_tensor]
            for idx in picks.tolist():
                orig = flat[idx].item()
                flat[idx] = orig + eps
                plus = loss_fn()
                flat[idx] = orig - eps
                minus = loss_fn()
                flat[idx] = orig
                if not (torch.isfinite(plus) and torch.isfinite(minus)):
                    raise NonFiniteLossError(f"勾配チェック: {name}[{idx}] の摂動で損失が非有限になりました")
                fd = float((plus - minus) / (2 * eps))
                a = float(analytic[name].view(-1)[idx])
                if max(abs(fd), abs(a)) < min_grad:
                    result.skipped += 1
                    continue
                rel = abs(a - fd) / (abs(fd) + 1e-8)
                result.errors.append(rel)
                result.checked += 1
                if rel > result.max_rel_error:
                    result.max_rel_error = rel
                    result.worst = f"{name}[{idx}]"
    return result


def eps_sweep(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, nn.Parameter]],
    eps_values: Sequence[float],
    **kwargs,
) -> list[float]:
    """eps ごとの最大相対誤差（大きすぎると打ち切り誤差、小さすぎると丸め誤差で増える）"""
    return [grad_check(loss_fn, params, eps=e, **kwargs).max_rel_error for e in eps_values]


def model_grad_check(
    variant: str = "nuq",
    cfg: Optional[ModelConfig] = None,
    batch_size: int = 2,
    seq_len: int = 6,
    context_frames: int = 2,
    eta1: float = 1.0,
    eta2: float = 1.0,
    eps: float = 1e-6,
    per_tensor: int = 2,
    min_grad: float = 1e-4,
    seed: int = 0,
) -> GradCheckResult:
    """小型モデルで nuq / fixed の損失の勾配をチェックする"""
    if variant not in ("nuq", "fixed"):
        raise ConfigError("variant は nuq / fixed のいずれかです", field="variant")
    cfg = cfg or TINY_MODEL
    torch.manual_seed(seed)
    model = NUQModel(cfg).double().train()
    gen = torch.Generator().manual_seed(seed + 1)
    frames = torch.rand((batch_size, seq_len, cfg.channels, cfg.image_size, cfg.image_size),
                        generator=gen, dtype=torch.float64)
    targets = frames[:, context_frames:]
    hyperprior = make_hyperprior("gamma")

    record = model.rollout_train(frames, seed + 2, context_frames=context_frames)
    noise = record.noise

    def loss_fn() -> Tensor:
        rec = model.rollout_train(frames, context_frames=context_frames, noise=noise)
        if variant == "nuq":
            return nuq_loss(rec, targets, eta1, eta2, hyperprior).total
        return fixed_precision_loss(rec, targets, eta1).total

    result = grad_check(loss_fn, list(model.named_parameters()), eps, per_tensor, min_grad, seed)
    logger.info(
        "gradcheck %s: max_rel_error=%.3e checked=%d skipped=%d worst=%s",
        variant, result.max_rel_error, result.checked, result.skipped, result.worst,
    )
    return result

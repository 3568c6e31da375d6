import math

import numpy as np
import pytest
import torch

from src.errors import ShapeError
from src.nuq.distributions import GaussianParams, TruncNormalParams
from src.nuq.losses import fixed_precision_loss, nuq_loss
from src.nuq.model import RolloutRecord

D = torch.float64


def _record(pred: torch.Tensor, b: float, prior_mean: float = 0.0, post_mean: float = 0.0) -> RolloutRecord:
    """[B, S, C, H, W] の予測と一定の b_t から記録を組み立てる"""
    bsz, steps = pred.shape[:2]
    shape = (bsz, steps, 1)
    b_t = torch.full((bsz, steps), b, dtype=D)
    return RolloutRecord(
        frames=pred,
        prior=GaussianParams(torch.full(shape, prior_mean, dtype=D), torch.ones(shape, dtype=D)),
        posterior=GaussianParams(torch.full(shape, post_mean, dtype=D), torch.ones(shape, dtype=D)),
        z=torch.zeros(shape, dtype=D),
        trunc=TruncNormalParams(torch.full((bsz, steps), 1.0 / b, dtype=D), torch.full((bsz, steps), 0.5, dtype=D)),
        s=1.0 / b_t,
        b=b_t,
    )


def test_all_terms_vanish():
    target = torch.rand(2, 3, 1, 4, 4, dtype=D)
    loss = nuq_loss(_record(target.clone(), 1.0), target, eta1=1.0, eta2=0.0)
    assert loss.total.item() == pytest.approx(0.0, abs=1e-12)
    assert loss.kl_latent.item() == 0.0


def test_precision_weighted_constant():
    pred = torch.zeros(1, 1, 1, 1, 1, dtype=D)
    target = torch.ones_like(pred)
    loss = nuq_loss(_record(pred, 2.0), target, eta1=1.0, eta2=0.0)
    expected = 0.5 * (2 - math.log(2))
    assert loss.total.item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.65343, abs=1e-5)


@pytest.mark.parametrize("e2", [0.25, 1.0, 4.0])
def test_optimal_precision_is_inverse_error(e2):
    grid = np.linspace(0.01, 10.0, 100_000)
    pred = torch.zeros(1, 1, 1, 1, 1, dtype=D)
    target = torch.full_like(pred, math.sqrt(e2))
    values = [
        nuq_loss(_record(pred, float(b)), target, eta1=0.0, eta2=0.0).total.item()
        for b in grid[::1000]
    ]
    coarse = grid[::1000][int(np.argmin(values))]
    fine = grid[np.argmin(0.5 * (grid * e2 - np.log(grid)))]
    assert fine == pytest.approx(1 / e2, abs=1e-3)
    assert coarse == pytest.approx(1 / e2, abs=0.1)


def test_halving_precision_halves_frame_gradient():
    target = torch.rand(2, 3, 1, 4, 4, dtype=D)
    base = torch.rand(2, 3, 1, 4, 4, dtype=D)
    norms = []
    for b in (2.0, 1.0):
        pred = base.clone().requires_grad_(True)
        nuq_loss(_record(pred, b), target, eta1=0.0, eta2=0.0).total.backward()
        norms.append(pred.grad.norm().item())
    assert norms[1] / norms[0] == pytest.approx(0.5, rel=1e-9)


def test_fixed_precision_constant():
    pred = torch.ones(1, 1, 1, 1, 2, dtype=D)
    target = torch.zeros_like(pred)
    # KL(N(μ,1)‖N(0,1)) = μ²/2 = 0.3
    loss = fixed_precision_loss(_record(pred, 1.0, post_mean=math.sqrt(0.6)), target, eta1=1.0)
    assert loss.kl_latent.item() == pytest.approx(0.3, abs=1e-12)
    assert loss.total.item() == pytest.approx(1.3, abs=1e-12)


def test_fixed_equals_nuq_with_unit_precision():
    pred = torch.rand(2, 3, 1, 4, 4, dtype=D)
    target = torch.rand(2, 3, 1, 4, 4, dtype=D)
    rec = _record(pred, 1.0, prior_mean=0.2, post_mean=-0.1)
    fixed = fixed_precision_loss(rec, target, eta1=0.5)
    nuq = nuq_loss(rec, target, eta1=0.5, eta2=0.0)
    assert fixed.total.item() == pytest.approx(nuq.total.item(), abs=1e-12)
    assert nuq.neg_log_precision.item() == 0.0


def test_total_recomposes_from_parts():
    pred = torch.rand(2, 3, 1, 4, 4, dtype=D)
    target = torch.rand(2, 3, 1, 4, 4, dtype=D)
    loss = nuq_loss(_record(pred, 3.0, post_mean=0.4), target, eta1=1e-2, eta2=1e-1)
    assert loss.recompose().item() == pytest.approx(loss.total.item(), rel=1e-6)
    adv = loss.with_adversarial(torch.tensor(2.0, dtype=D), gamma=0.1)
    assert adv.total.item() == pytest.approx(loss.total.item() - 0.2, rel=1e-12)
    assert adv.recompose().item() == pytest.approx(adv.total.item(), rel=1e-6)
    assert set(loss.per_t) == {"weighted_recon", "neg_log_precision", "kl_latent", "kl_hyper"}
    assert loss.per_t["weighted_recon"].shape == (3,)


def test_zero_gamma_leaves_total_untouched():
    pred = torch.rand(1, 2, 1, 4, 4, dtype=D)
    loss = nuq_loss(_record(pred, 2.0), torch.zeros_like(pred))
    assert loss.with_adversarial(torch.tensor(5.0, dtype=D), gamma=0.0).total is loss.total


def test_finite_across_precision_range():
    pred = torch.rand(1, 2, 1, 4, 4, dtype=D)
    for b in (1e-6, 1.0, 1e3):
        assert torch.isfinite(nuq_loss(_record(pred, b), torch.zeros_like(pred)).total)


def test_misaligned_targets():
    pred = torch.rand(1, 2, 1, 4, 4, dtype=D)
    with pytest.raises(ShapeError):
        nuq_loss(_record(pred, 1.0), torch.zeros(1, 3, 1, 4, 4, dtype=D))

import math

import numpy as np
import pytest
import torch
from scipy import integrate, stats

from src.errors import ConfigError, DomainError, SamplingStarvationError, ShapeError
from src.nuq.distributions import (
    GammaHyperprior,
    GaussianParams,
    TruncNormalParams,
    UniformHyperprior,
    gamma_logpdf,
    kl_diag_gaussian,
    kl_truncnorm_gamma,
    make_hyperprior,
    reparam_gaussian_sample,
    sample_trunc_normal,
    trunc_normal_logpdf,
)

D = torch.float64


def _g(mean, var) -> GaussianParams:
    return GaussianParams(torch.tensor(mean, dtype=D), torch.tensor(var, dtype=D))


def _tn(alpha, beta) -> TruncNormalParams:
    return TruncNormalParams(torch.tensor(alpha, dtype=D), torch.tensor(beta, dtype=D))


# ─── ガウス ───

def test_reparam_identity_and_degenerate():
    e = torch.randn(3, dtype=D)
    assert torch.allclose(reparam_gaussian_sample(_g([0.0] * 3, [1.0] * 3), e), e)
    z = reparam_gaussian_sample(_g([1.0, -2.0, 3.0], [1e-12] * 3), e)
    assert torch.allclose(z, torch.tensor([1.0, -2.0, 3.0], dtype=D), atol=1e-5)


def test_reparam_dimension_mismatch():
    with pytest.raises(ShapeError):
        reparam_gaussian_sample(_g([0.0, 0.0], [1.0, 1.0]), torch.zeros(3, dtype=D))


def test_reparam_monte_carlo_moments():
    n = 10 ** 6
    gen = torch.Generator().manual_seed(0)
    p = GaussianParams(torch.full((n,), 2.0, dtype=D), torch.full((n,), 4.0, dtype=D))
    z = reparam_gaussian_sample(p, torch.randn(n, generator=gen, dtype=D))
    se_mean = math.sqrt(4.0 / n)
    se_var = 4.0 * math.sqrt(2.0 / n)
    assert abs(z.mean().item() - 2.0) < 4 * se_mean
    assert abs(z.var().item() - 4.0) < 4 * se_var


def test_kl_gaussian_constants():
    assert kl_diag_gaussian(_g([1.0], [1.0]), _g([0.0], [1.0])).item() == pytest.approx(0.5, abs=1e-12)
    expected = 0.5 * (2 - 1 - math.log(2))
    assert kl_diag_gaussian(_g([0.0], [2.0]), _g([0.0], [1.0])).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.15343, abs=1e-5)


def test_kl_gaussian_self_is_zero_and_nonnegative():
    gen = torch.Generator().manual_seed(1)
    for _ in range(20):
        q = GaussianParams(torch.randn(5, generator=gen, dtype=D), torch.rand(5, generator=gen, dtype=D) + 0.1)
        p = GaussianParams(torch.randn(5, generator=gen, dtype=D), torch.rand(5, generator=gen, dtype=D) + 0.1)
        assert kl_diag_gaussian(q, q).item() == 0.0
        assert kl_diag_gaussian(q, p).item() >= 0.0


def test_kl_gaussian_matches_monte_carlo():
    gen = torch.Generator().manual_seed(2)
    n = 10 ** 6
    for _ in range(5):
        mq, mp = torch.randn(2, generator=gen, dtype=D)
        vq, vp = torch.rand(2, generator=gen, dtype=D) + 0.5
        closed = kl_diag_gaussian(_g([mq.item()], [vq.item()]), _g([mp.item()], [vp.item()])).item()
        x = mq + vq.sqrt() * torch.randn(n, generator=gen, dtype=D)
        logq = stats.norm.logpdf(x.numpy(), mq.item(), math.sqrt(vq.item()))
        logp = stats.norm.logpdf(x.numpy(), mp.item(), math.sqrt(vp.item()))
        mc = float(np.mean(logq - logp))
        # 小さい KL は絶対誤差で見る
        assert mc == pytest.approx(closed, rel=0.01, abs=5e-3)


def test_kl_gaussian_rejects_nonpositive_variance():
    with pytest.raises(DomainError):
        kl_diag_gaussian(_g([0.0], [0.0]), _g([0.0], [1.0]))


# ─── 切断正規 ───

def test_trunc_normal_degenerate_scale():
    s = sample_trunc_normal(_tn(5.0, 1e-9), seed=0)
    assert s.item() == pytest.approx(5.0, abs=1e-6)


def test_trunc_normal_half_normal_mean():
    n = 10 ** 6
    s = sample_trunc_normal(_tn(0.0, 1.0), seed=0, sample_shape=(n,), s_min=1e-12)
    mean = math.sqrt(2 / math.pi)
    se = math.sqrt(1 - 2 / math.pi) / math.sqrt(n)
    assert abs(s.mean().item() - mean) < 4 * se


def test_trunc_normal_moments_match_scipy():
    n = 10 ** 6
    alpha, beta, s_min = 0.5, 1.0, 1e-3
    s = sample_trunc_normal(_tn(alpha, beta), seed=1, sample_shape=(n,), s_min=s_min).numpy()
    dist = stats.truncnorm((s_min - alpha) / beta, np.inf, loc=alpha, scale=beta)
    assert s.min() >= s_min
    assert abs(s.mean() - dist.mean()) < 4 * dist.std() / math.sqrt(n)
    assert abs(s.var() - dist.var()) < 4 * dist.var() * math.sqrt(2.0 / n) * 1.5


def test_trunc_normal_is_seeded():
    p = _tn(0.2, 0.7)
    a = sample_trunc_normal(p, seed=7, sample_shape=(100,))
    b = sample_trunc_normal(p, seed=7, sample_shape=(100,))
    assert torch.equal(a, b)


def test_trunc_normal_starvation():
    p = _tn(0.0, 1e-8)
    with pytest.raises(SamplingStarvationError):
        sample_trunc_normal(p, seed=0, s_min=1e-3, max_retries=5)


def test_trunc_normal_pathwise_gradient():
    alpha = torch.tensor(0.8, dtype=D, requires_grad=True)
    beta = torch.tensor(0.3, dtype=D, requires_grad=True)
    eps = torch.tensor(0.4, dtype=D)
    s = sample_trunc_normal(TruncNormalParams(alpha, beta), noise=eps)
    s.backward()
    assert alpha.grad.item() == pytest.approx(1.0, rel=1e-6)
    assert beta.grad.item() == pytest.approx(0.4, rel=1e-6)


def test_trunc_normal_logpdf_constants():
    at_zero = trunc_normal_logpdf(torch.tensor(1e-12, dtype=D), _tn(0.0, 1.0)).item()
    assert at_zero == pytest.approx(math.log(2 / math.sqrt(2 * math.pi)), abs=1e-9)
    assert at_zero == pytest.approx(-0.22579, abs=1e-5)
    far = trunc_normal_logpdf(torch.tensor(3.05, dtype=D), _tn(3.0, 0.1)).item()
    assert far == pytest.approx(stats.norm.logpdf(3.05, 3.0, 0.1), abs=1e-6)


def test_trunc_normal_logpdf_integrates_to_one():
    rng = np.random.default_rng(0)
    for _ in range(10):
        alpha, beta = rng.uniform(0, 3), rng.uniform(0.1, 2)
        p = _tn(alpha, beta)
        f = lambda x: math.exp(trunc_normal_logpdf(torch.tensor(x, dtype=D), p).item())  # noqa: E731
        total, _ = integrate.quad(f, 1e-12, alpha + 10 * beta, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)


def test_trunc_normal_logpdf_domain():
    with pytest.raises(DomainError):
        trunc_normal_logpdf(torch.tensor(0.0, dtype=D), _tn(1.0, 1.0))


# ─── ガンマ超事前分布 ───

def test_gamma_logpdf_constants():
    assert gamma_logpdf(torch.tensor(0.5, dtype=D), GammaHyperprior(1.0, 1.0)).item() == pytest.approx(-0.5)
    h = GammaHyperprior(2.0, 1.0)
    grid = torch.linspace(0.01, 5, 2000, dtype=D)
    best = grid[torch.argmax(gamma_logpdf(grid, h))].item()
    assert best == pytest.approx(1.0, abs=5e-3)


def test_gamma_logpdf_is_shape_rate():
    s = torch.tensor(0.7, dtype=D)
    ours = gamma_logpdf(s, GammaHyperprior(3.0, 2.0)).item()
    assert ours == pytest.approx(stats.gamma.logpdf(0.7, a=3.0, scale=1 / 2.0), abs=1e-10)


def test_gamma_logpdf_integrates_to_one():
    h = GammaHyperprior(2.0, 1.0)
    f = lambda x: math.exp(gamma_logpdf(torch.tensor(x, dtype=D), h).item())  # noqa: E731
    total, _ = integrate.quad(f, 1e-12, 50)
    assert total == pytest.approx(1.0, abs=1e-4)


def test_gamma_logpdf_domain():
    with pytest.raises(DomainError):
        gamma_logpdf(torch.tensor(-1.0, dtype=D), GammaHyperprior())


def test_make_hyperprior():
    assert isinstance(make_hyperprior("uniform"), UniformHyperprior)
    with pytest.raises(ConfigError):
        make_hyperprior("lognormal")
    with pytest.raises(ConfigError):
        make_hyperprior("gamma", alpha=0.0)


# ─── KL(q_λ‖p(s)) ───

def test_kl_truncnorm_gamma_matches_quadrature():
    alpha, beta = 1.0, 0.3
    s_min = 1e-3
    q = _tn(alpha, beta)
    h = GammaHyperprior(2.0, 1.0)
    # サンプルは s_min 以上に切断されるので、求積も同じ台で行う
    z = stats.norm.sf((s_min - alpha) / beta)
    log_norm = math.log(z) - stats.norm.logcdf(alpha / beta)

    def integrand(x):
        logq = stats.norm.logpdf(x, alpha, beta) - stats.norm.logcdf(alpha / beta)
        return math.exp(logq - log_norm) * (logq - stats.gamma.logpdf(x, a=2.0, scale=1.0))

    exact, _ = integrate.quad(integrand, s_min, alpha + 12 * beta, limit=200)
    est = kl_truncnorm_gamma(q, h, 10 ** 6, seed=0, s_min=s_min).item()
    assert est == pytest.approx(exact, rel=0.01)


def test_kl_truncnorm_gamma_nonnegative():
    n = 10 ** 5
    for alpha, beta in [(0.5, 1.0), (2.0, 0.5), (1.0, 1.0)]:
        q = _tn(alpha, beta)
        h = GammaHyperprior(2.0, 1.0)
        s = sample_trunc_normal(q, seed=3, sample_shape=(n,))
        vals = trunc_normal_logpdf(s, q) - h.log_prob(s)
        se = vals.std().item() / math.sqrt(n)
        assert vals.mean().item() >= -3 * se


def test_kl_truncnorm_gamma_grows_as_scale_shrinks():
    h = GammaHyperprior(2.0, 1.0)
    wide = kl_truncnorm_gamma(_tn(1.0, 1e-2), h, 1000, seed=0).item()
    narrow = kl_truncnorm_gamma(_tn(1.0, 1e-3), h, 1000, seed=0).item()
    assert narrow > wide


def test_kl_truncnorm_gamma_needs_samples():
    with pytest.raises(ConfigError):
        kl_truncnorm_gamma(_tn(1.0, 1.0), GammaHyperprior(), 0, seed=0)

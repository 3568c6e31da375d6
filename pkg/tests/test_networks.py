import pytest
import torch

from src.errors import DomainError, ShapeError
from src.nuq.distributions import GaussianParams
from src.nuq.networks import (
    FrameDecoder,
    FrameEncoder,
    GaussianLSTM,
    PredictorLSTM,
    VarianceEncoder,
    auto_num_levels,
)


@pytest.mark.parametrize("size, sides", [(48, [24, 12, 6, 3]), (64, [32, 16, 8, 4, 2])])
def test_skip_sides_halve(size, sides):
    levels = auto_num_levels(size)
    assert levels == len(sides)
    enc = FrameEncoder(size, 1, 4, levels, 16)
    dec = FrameDecoder(size, 1, 4, levels, 32)
    feat, skips = enc(torch.rand(2, 1, size, size))
    assert feat.shape == (2, 16)
    assert [s.shape[-1] for s in skips] == sides
    out = dec(torch.randn(2, 32), skips)
    assert out.shape == (2, 1, size, size)
    assert out.min() >= 0 and out.max() <= 1


def test_encoder_rejects_indivisible_size():
    with pytest.raises(ShapeError):
        FrameEncoder(30, 1, 4, 3, 16)


def test_encoder_is_deterministic_in_eval():
    enc = FrameEncoder(16, 1, 4, 3, 8).eval()
    x = torch.rand(1, 1, 16, 16)
    assert torch.equal(enc(x)[0], enc(x.clone())[0])


def test_decoder_uses_skips():
    torch.manual_seed(0)
    enc = FrameEncoder(16, 1, 4, 3, 8)
    dec = FrameDecoder(16, 1, 4, 3, 8)
    _, skips = enc(torch.rand(2, 1, 16, 16))
    skips = [s.detach().requires_grad_(True) for s in skips]
    dec(torch.randn(2, 8), skips)[0, 0, 5, 5].backward()
    assert skips[0].grad.abs().sum() > 0


def test_decoder_rejects_wrong_skip_shape():
    dec = FrameDecoder(16, 1, 4, 3, 8)
    skips = [torch.zeros(2, 4, 8, 8), torch.zeros(2, 8, 4, 4), torch.zeros(2, 16, 3, 3)]
    with pytest.raises(ShapeError):
        dec(torch.randn(2, 8), skips)


def test_gaussian_lstm_smoke_and_clamp():
    net = GaussianLSTM(8, 16, 4)
    state = net.init_state(3)
    p, state2 = net(torch.zeros(3, 8), state)
    p.validate()
    again, _ = net(torch.zeros(3, 8), state)
    assert torch.equal(p.mean, again.mean)
    # log-variance は [-10, 10] に丸める
    big = GaussianParams.from_logvar(torch.zeros(2), torch.tensor([50.0, -50.0]))
    assert big.variance[0].item() == pytest.approx(torch.exp(torch.tensor(10.0)).item())
    assert big.variance[1].item() == pytest.approx(torch.exp(torch.tensor(-10.0)).item())


def test_gaussian_lstm_state_evolves():
    torch.manual_seed(1)
    net = GaussianLSTM(8, 16, 4)
    state = net.init_state(1)
    p1, state = net(torch.randn(1, 8), state)
    p2, _ = net(torch.randn(1, 8), state)
    assert not torch.allclose(p1.mean, p2.mean)


def test_predictor_input_width():
    net = PredictorLSTM(feature_dim=8, latent_dim=4, hidden_dim=16)
    assert net.embed.in_features == 12
    out, _ = net(torch.zeros(2, 8), torch.zeros(2, 4), net.init_state(2))
    assert out.shape == (2, 16)
    with pytest.raises(ShapeError):
        net(torch.zeros(2, 8), torch.zeros(2, 5), net.init_state(2))


def test_variance_encoder_contract():
    torch.manual_seed(2)
    enc = VarianceEncoder(4, 8)
    params = enc(torch.rand(5, 4) * 10 + 1e-3)
    params.validate()
    assert (params.alpha >= 0).all() and (params.beta > 0).all()
    other = enc(torch.rand(5, 4) * 10 + 1e-3)
    assert not torch.allclose(params.alpha, other.alpha)
    with pytest.raises(DomainError):
        enc(torch.tensor([[float("nan"), 1.0, 1.0, 1.0]]))


def test_variance_encoder_gradient_matches_finite_differences():
    torch.manual_seed(3)
    enc = VarianceEncoder(4, 8).double()
    x = (torch.rand(3, 4, dtype=torch.float64) + 0.5).requires_grad_(True)

    def fn(v):
        p = enc(v)
        return p.alpha, p.beta

    assert torch.autograd.gradcheck(fn, (x,), eps=1e-6, atol=1e-8, rtol=1e-4)

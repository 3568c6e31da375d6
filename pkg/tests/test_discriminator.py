import math

import numpy as np
import pytest
import torch
from scipy import stats

from src.errors import ConfigError, ShapeError
from src.nuq.discriminator import (
    FrameWindow,
    SeqDiscriminator,
    disc_score,
    gan_losses,
    sample_fake_windows,
    sample_real_windows,
)


@pytest.fixture
def disc() -> SeqDiscriminator:
    torch.manual_seed(0)
    return SeqDiscriminator(16, base_width=4, feature_dim=16, hidden_dim=16, k=3).eval()


def test_scores_are_probabilities(disc):
    window = FrameWindow(torch.rand(4, 3, 1, 16, 16), "real", torch.zeros(4, dtype=torch.long))
    scores = disc_score(disc, window)
    assert scores.shape == (4,)
    assert ((scores > 0) & (scores < 1)).all()


def test_score_depends_on_frame_order(disc):
    frames = torch.rand(1, 3, 1, 16, 16)
    a = disc(frames)
    b = disc(frames[:, [2, 0, 1]])
    assert not torch.equal(a, b)


def test_batched_equals_single(disc):
    frames = torch.rand(5, 3, 1, 16, 16)
    batched = disc(frames)
    single = torch.cat([disc(frames[i:i + 1]) for i in range(5)])
    assert torch.allclose(batched, single, atol=1e-6)


def test_wrong_window_length(disc):
    with pytest.raises(ShapeError):
        disc_score(disc, FrameWindow(torch.rand(2, 4, 1, 16, 16), "real", torch.zeros(2, dtype=torch.long)))


def test_real_windows_when_length_equals_k():
    frames = torch.rand(6, 3, 1, 4, 4)
    window = sample_real_windows(frames, 3, seed=0)
    assert window.origin == "real"
    assert (window.starts == 0).all()
    assert torch.equal(window.frames, frames)


def test_real_window_starts_are_uniform():
    frames = torch.rand(10_000, 20, 1, 1, 1)
    window = sample_real_windows(frames, 3, seed=1)
    starts = window.starts.numpy()
    assert starts.min() == 0 and starts.max() == 17
    counts = np.bincount(starts, minlength=18)
    assert stats.chisquare(counts).pvalue > 0.01
    # 窓は元の連続フレーム
    rows = torch.arange(10_000)
    assert torch.equal(window.frames[:, 1], frames[rows, window.starts + 1])


def test_window_sampling_is_seeded_and_checked():
    frames = torch.rand(8, 6, 1, 2, 2)
    assert torch.equal(sample_real_windows(frames, 3, seed=4).starts, sample_real_windows(frames, 3, seed=4).starts)
    assert sample_fake_windows(frames, 3, seed=0).origin == "generated"
    with pytest.raises(ConfigError):
        sample_real_windows(frames, 7, seed=0)


def test_gan_losses_constants():
    half = torch.full((8,), 0.5, dtype=torch.float64)
    disc_loss, gen_term = gan_losses(half, half)
    assert disc_loss.item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert gen_term.item() == pytest.approx(math.log(2), abs=1e-12)

    real = torch.full((4,), 1 - 1e-7, dtype=torch.float64)
    fake = torch.full((4,), 1e-7, dtype=torch.float64)
    assert gan_losses(real, fake)[0].item() == pytest.approx(0.0, abs=1e-6)


def test_gan_losses_clamps_and_stays_nonnegative():
    disc_loss, _ = gan_losses(torch.tensor([1.0, 0.9]), torch.tensor([0.0, 1.0]))
    assert torch.isfinite(disc_loss)
    assert disc_loss.item() >= 0


def test_gan_losses_empty():
    with pytest.raises(ConfigError):
        gan_losses(torch.empty(0), torch.rand(3))

import numpy as np
import pytest
import torch

from src.data.models import BounceEvent, BounceLog
from src.errors import ConfigError
from src.evaluation.analysis import (
    best_of_k_curve,
    diversity_report,
    scale_trace,
    uncertainty_from_table,
    uncertainty_report,
)
from src.evaluation.metrics import frame_scores
from src.evaluation.protocol import EvalConfig, best_of_k_eval, select_best
from src.nuq.model import GenerationResult, NUQModel


@pytest.fixture
def model(tiny_model_cfg) -> NUQModel:
    torch.manual_seed(0)
    return NUQModel(tiny_model_cfg)


# ─── best-of-K ───

def test_single_future_equals_plain_rollout(model, tiny_dataset):
    report = best_of_k_eval(model, tiny_dataset, 1, 2, 4, seed=3, split="test")
    videos = tiny_dataset.indices("test")
    clips = torch.from_numpy(tiny_dataset.videos[videos, :6])
    gen = model.rollout_generate(clips[:, :2], 4, num_futures=1, seed=3)
    s, p = frame_scores(gen.frames[0], clips[:, 2:])
    assert report.mean_ssim == pytest.approx(float(s.mean()), abs=1e-9)
    assert report.mean_psnr == pytest.approx(float(p.mean()), abs=1e-9)
    assert sorted(report.frames["frame"].unique()) == [2, 3, 4, 5]
    assert (report.selection["future"] == 0).all()


def test_ground_truth_candidate_is_selected(model, tiny_dataset):
    videos = tiny_dataset.indices("test")
    truth = torch.from_numpy(tiny_dataset.videos[videos, 2:6])

    def fake_generate(context, steps, num_futures=1, seed=0):
        frames = torch.zeros((num_futures, *truth.shape))
        frames[1] = truth
        s = torch.ones((num_futures, truth.shape[0], steps))
        return GenerationResult(frames=frames, s=s, b=1 / s)

    model.rollout_generate = fake_generate
    report = best_of_k_eval(model, tiny_dataset, 3, 2, 4, split="test")
    assert (report.selection["future"] == 1).all()
    assert report.mean_ssim == pytest.approx(1.0)
    assert report.mean_psnr == 100.0


def test_more_futures_never_hurt(model, tiny_dataset):
    small = best_of_k_eval(model, tiny_dataset, 2, 2, 4, seed=0, split="test")
    large = best_of_k_eval(model, tiny_dataset, 4, 2, 4, seed=0, split="test")
    assert large.mean_ssim >= small.mean_ssim - 1e-12


def test_threaded_evaluation_matches_serial(model, tiny_dataset):
    serial = best_of_k_eval(model, tiny_dataset, 2, 2, 4, indices=[0, 1, 2], batch_size=1)
    threaded = best_of_k_eval(model, tiny_dataset, 2, 2, 4, indices=[0, 1, 2], batch_size=1, workers=2)
    assert serial.frames.equals(threaded.frames)


def test_keep_futures_for_diversity(model, tiny_dataset):
    report = best_of_k_eval(model, tiny_dataset, 3, 2, 4, split="test", keep_futures=1)
    assert len(report.futures) == 1
    video = next(iter(report.futures))
    assert report.futures[video].shape == (3, 4, 1, 16, 16)
    assert report.truths[video].shape == (4, 1, 16, 16)
    assert set(report.traces) == set(tiny_dataset.indices("test"))


def test_eval_arguments_are_checked(model, tiny_dataset):
    with pytest.raises(ConfigError):
        best_of_k_eval(model, tiny_dataset, 0, 2, 4)
    with pytest.raises(ConfigError):
        best_of_k_eval(model, tiny_dataset, 1, 5, 4)
    with pytest.raises(ConfigError):
        EvalConfig(select_by="lpips").validate()


def test_select_best_prefers_first_on_ties():
    ssim_k = torch.tensor([[0.5, 0.5], [0.5, 0.5], [0.2, 0.3]])
    assert select_best(ssim_k, torch.zeros(3, 2)) == 0
    assert select_best(torch.zeros(3, 2), torch.tensor([[1.0], [3.0], [2.0]]), "psnr") == 1


# ─── 多様性 ───

def test_identical_futures_have_no_diversity():
    one = torch.rand(1, 4, 1, 16, 16)
    futures = {0: one.repeat(3, 1, 1, 1, 1)}
    report = diversity_report(futures, {0: torch.rand(4, 1, 16, 16)}, k_grid=(1, 2, 3))
    np.testing.assert_allclose(report.intra["intra_ssim"], 1.0)
    assert report.best_of_k["ssim"].nunique() == 1


def test_best_of_two_with_truth():
    truth = torch.rand(4, 1, 16, 16)
    futures = {7: torch.stack([torch.rand(4, 1, 16, 16), truth])}
    report = diversity_report(futures, {7: truth}, k_grid=(1, 2, 5))
    assert report.best_of_k["k"].tolist() == [1, 2]
    assert report.best_of_k["ssim"].iloc[-1] == pytest.approx(1.0)


def test_best_of_k_curve_is_nondecreasing():
    scores = np.random.default_rng(0).random((6, 20))
    curve = best_of_k_curve(scores, [1, 5, 10, 20])
    assert np.all(np.diff(curve["ssim"]) >= 0)


def test_diversity_needs_two_futures():
    with pytest.raises(ConfigError):
        diversity_report({0: torch.rand(1, 4, 1, 16, 16)})


# ─── 不確かさ ───

def test_scale_trace():
    np.testing.assert_array_equal(scale_trace([1.0, 1.0, 2.0]), [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(scale_trace([0.3, 0.3]), [0.0, 0.0])
    with pytest.raises(ConfigError):
        scale_trace([])


def test_spikes_at_bounces_are_detected():
    log = BounceLog()
    traces = {}
    for video in range(6):
        s = np.full(15, 0.2)
        for frame in (8, 14):
            log.add(BounceEvent(video, frame, "left", 1.0, 0.0))
            s[frame - 5] = 1.0
        traces[video] = s
    report = uncertainty_report(traces, log, frame_offset=5)
    assert report.pooled_near > report.pooled_far
    assert report.p_value < 0.05
    assert report.table["bounce"].sum() == 12
    assert (report.table["frame"].min(), report.table["frame"].max()) == (5, 19)

    again = uncertainty_from_table(report.table)
    assert again.pooled_near == pytest.approx(report.pooled_near)
    assert again.p_value == pytest.approx(report.p_value)


def test_uncertainty_without_bounce_log():
    report = uncertainty_report({0: np.array([1.0, 2.0, 3.0])})
    assert not report.table["near_bounce"].any()
    assert np.isnan(report.pooled_near)
    assert report.p_value == 1.0

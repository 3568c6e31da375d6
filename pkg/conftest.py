import pytest
import torch

from src.data.models import SynthConfig
from src.data.synth import synthesize_smmnist
from src.nuq.model import ModelConfig
from src.training.config import TrainConfig


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    # 16x16 → 3 段（8, 4, 2）
    return ModelConfig(image_size=16, base_width=4, feature_dim=16, latent_dim=4, hidden_dim=16, variance_hidden=8)


@pytest.fixture(scope="session")
def tiny_synth_cfg() -> SynthConfig:
    return SynthConfig(num_videos=8, val_videos=2, test_videos=2, seq_len=8, canvas=16, digit_size=8, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_synth_cfg):
    dataset, _ = synthesize_smmnist(tiny_synth_cfg)
    return dataset


@pytest.fixture
def tiny_train_cfg(tmp_path) -> TrainConfig:
    return TrainConfig(
        batch_size=4,
        epochs=2,
        context_frames=2,
        train_len=6,
        predict_len=4,
        latent_dim=4,
        feature_dim=16,
        hidden_dim=16,
        base_width=4,
        val_videos=2,
        val_k=2,
        patience=0,
        checkpoint_dir=str(tmp_path / "ckpt"),
        log_path=str(tmp_path / "runlog.csv"),
    )


@pytest.fixture
def frames16() -> torch.Tensor:
    gen = torch.Generator().manual_seed(0)
    return torch.rand((2, 6, 1, 16, 16), generator=gen)

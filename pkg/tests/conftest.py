"""Shared fixtures: tiny networks, a fixed toy feature extractor and a synthetic dataset."""

from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn as nn

from gat_transfer.config import AppConfig
from gat_transfer.data import DataConfig
from gat_transfer.landmarks import LandmarkConfig, LandmarkSet
from gat_transfer.networks import NetworkConfig
from gat_transfer.perceptual import PerceptualConfig
from gat_transfer.pipeline import preprocess_dataset
from gat_transfer.synthetic import SyntheticConfig, generate_synthetic_dataset, landmark_template
from gat_transfer.training import TrainConfig

TINY_NETWORK = NetworkConfig(base_channels=4, residual_blocks=1, disc_base_channels=4)
TINY_SIZE = 32

# Shallow taps come from the first stage, deep ones from the second
TOY_STAGES = {
    "conv1_1": 0, "conv1_2": 0, "conv2_1": 0, "conv2_2": 0,
    "conv3_1": 1, "conv3_2": 1, "conv3_3": 1, "conv4_1": 1,
}


class ToyExtractor(nn.Module):
    """Two fixed smooth conv stages standing in for the VGG taps."""

    def __init__(self, seed: int = 1234):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.stage0 = nn.Conv2d(3, 4, kernel_size=3, padding=1)
        self.stage1 = nn.Conv2d(4, 6, kernel_size=3, stride=2, padding=1)
        with torch.no_grad():
            for conv in (self.stage0, self.stage1):
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * 0.3)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=generator) * 0.1)
        self.requires_grad_(False)

    def forward(self, images: torch.Tensor, layers) -> dict[str, torch.Tensor]:
        first = torch.tanh(self.stage0(images))
        second = torch.tanh(self.stage1(first))
        stages = (first, second)
        return {name: stages[TOY_STAGES[name]] for name in layers}


@pytest.fixture
def toy_extractor() -> ToyExtractor:
    return ToyExtractor()


@pytest.fixture
def tiny_network() -> NetworkConfig:
    return TINY_NETWORK


@pytest.fixture
def template_landmarks() -> LandmarkSet:
    """Template face on a 256×256 canvas."""
    return LandmarkSet(points=landmark_template() * 256, image_id="template")


@pytest.fixture
def synthetic_root(tmp_path: Path) -> tuple[Path, Path]:
    """Small synthetic dataset; returns (root, annotation file)."""
    cfg = SyntheticConfig(train_x=3, train_y=2, test_x=2, test_y=2, raw_size=48, seed=7)
    root = tmp_path / "data"
    return root, generate_synthetic_dataset(root, cfg)


@pytest.fixture
def tiny_app(tmp_path: Path, synthetic_root) -> AppConfig:
    root, annotations = synthetic_root
    return AppConfig(
        runs_dir=tmp_path / "runs",
        data=DataConfig(root=root, processed_dir=tmp_path / "processed", image_size=TINY_SIZE),
        landmarks=LandmarkConfig(detector="annotations", annotations_path=annotations, dilation_px=1),
        perceptual=PerceptualConfig(weights="random"),
        network=TINY_NETWORK,
        training=TrainConfig(epochs=2, device="cpu", checkpoint_every=1, log_every=1),
    )


@pytest.fixture
def prepared(tiny_app: AppConfig):
    """(app, manifest, cache) after preprocessing the synthetic dataset."""
    manifest, cache = preprocess_dataset(tiny_app)
    return tiny_app, manifest, cache


def random_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)

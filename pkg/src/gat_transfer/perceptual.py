"""Frozen VGG-16 feature taps and Gram matrices for style and content losses."""

import logging
from pathlib import Path
from typing import Iterable, Protocol

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torchvision.models import VGG16_Weights, vgg16

from .errors import UnknownLayerError

logger = logging.getLogger(__name__)

# Index of the ReLU following each named convolution in torchvision's vgg16().features
VGG16_LAYERS = {
    "conv1_1": 1,
    "conv1_2": 3,
    "conv2_1": 6,
    "conv2_2": 8,
    "conv3_1": 11,
    "conv3_2": 13,
    "conv3_3": 15,
    "conv4_1": 18,
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PerceptualConfig(BaseModel):
    """Backbone weights and the layers used by style and content losses."""
    model_config = ConfigDict(extra="forbid")

    weights: str = Field(
        default="imagenet",
        description='"imagenet" (torchvision download), "random", or a path to a state dict',
    )
    style_layers: list[str] = Field(default_factory=lambda: ["conv2_2", "conv3_2"])
    content_layers: list[str] = Field(default_factory=lambda: ["conv4_1"])

    @field_validator("style_layers", "content_layers")
    @classmethod
    def _known_layers(cls, layers: list[str]) -> list[str]:
        unknown = [name for name in layers if name not in VGG16_LAYERS]
        if unknown:
            raise ValueError(f"Unknown VGG-16 layers {unknown}; choose from {sorted(VGG16_LAYERS)}")
        if not layers:
            raise ValueError("At least one layer is required")
        return layers


class FeatureExtractor(Protocol):
    """Anything mapping a [-1, 1] image batch to named feature maps."""

    def __call__(self, images: torch.Tensor, layers: Iterable[str]) -> dict[str, torch.Tensor]:
        ...


class VGGFeatureExtractor(nn.Module):
    """VGG-16 convolutional trunk, frozen, truncated after the deepest requested tap."""

    def __init__(self, weights: str = "imagenet", max_layer: str = "conv4_1"):
        super().__init__()
        if max_layer not in VGG16_LAYERS:
            raise UnknownLayerError(max_layer)

        if weights == "imagenet":
            backbone = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        elif weights == "random":
            logger.warning("Using randomly initialised VGG-16; perceptual losses will not be meaningful")
            backbone = vgg16(weights=None)
        else:
            backbone = vgg16(weights=None)
            state_dict = torch.load(Path(weights), map_location="cpu", weights_only=True)
            backbone.load_state_dict(state_dict)
            logger.info(f"Loaded VGG-16 weights from {weights}")

        self.features = backbone.features[: VGG16_LAYERS[max_layer] + 1]
        for module in self.features:
            if isinstance(module, nn.ReLU):
                module.inplace = False
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

        self.requires_grad_(False)
        self.eval()

    @classmethod
    def from_config(cls, cfg: PerceptualConfig) -> "VGGFeatureExtractor":
        deepest = max(cfg.style_layers + cfg.content_layers, key=VGG16_LAYERS.__getitem__)
        return cls(weights=cfg.weights, max_layer=deepest)

    def train(self, mode: bool = True) -> "VGGFeatureExtractor":
        # The backbone is always evaluated in inference mode
        return super().train(False)

    def forward(self, images: torch.Tensor, layers: Iterable[str]) -> dict[str, torch.Tensor]:
        layers = list(layers)
        wanted: dict[int, str] = {}
        for name in layers:
            index = VGG16_LAYERS.get(name)
            if index is None or index >= len(self.features):
                raise UnknownLayerError(name)
            wanted[index] = name

        x = ((images + 1.0) / 2.0 - self.mean) / self.std
        out: dict[str, torch.Tensor] = {}
        last = max(wanted)
        for index, module in enumerate(self.features):
            x = module(x)
            if index in wanted:
                out[wanted[index]] = x
            if index == last:
                break
        return out


def extract_features(
    extractor: FeatureExtractor, images: torch.Tensor, layers: Iterable[str]
) -> dict[str, torch.Tensor]:
    """Named feature maps of a [-1, 1] image batch (B×3×H×W)."""
    return extractor(images, layers)


def gram(features: torch.Tensor) -> torch.Tensor:
    """G = V·Vᵀ with V the C×(H·W) flattening of each channel.

    Accepts C×H×W or B×C×H×W and returns C×C or B×C×C.
    """
    if features.dim() == 3:
        return gram(features.unsqueeze(0)).squeeze(0)
    if features.dim() != 4:
        raise ValueError(f"Feature map must be 3-D or 4-D, got {features.dim()}-D")
    b, c, h, w = features.shape
    v = features.reshape(b, c, h * w)
    return torch.bmm(v, v.transpose(1, 2))

"""Dual I/O generator and spectrally normalised PatchGAN discriminators."""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field
from torch.nn.utils.parametrizations import spectral_norm

from .errors import ShapeError

logger = logging.getLogger(__name__)


class NetworkConfig(BaseModel):
    """Channel widths and depth of the generator and discriminators."""
    model_config = ConfigDict(extra="forbid")

    base_channels: int = Field(default=32, ge=1)
    residual_blocks: int = Field(default=9, ge=0)
    disc_base_channels: int = Field(default=64, ge=1)


@dataclass
class GeneratorOutput:
    """x_y: content x in the style of y; y_x: content y in the style of x."""
    x_y: torch.Tensor
    y_x: torch.Tensor


def _conv_block(in_ch: int, out_ch: int, kernel: int, stride: int, padding: int) -> list[nn.Module]:
    return [
        nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=stride, padding=padding, bias=False),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    ]


def _upconv_block(in_ch: int, out_ch: int) -> list[nn.Module]:
    return [
        nn.ConvTranspose2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1, bias=False),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    ]


class ResidualBlock(nn.Module):
    """conv-norm-relu-conv-norm with an additive skip; shape preserving."""

    def __init__(self, channels: int):
        super().__init__()
        self.main = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, stride=1, padding=1, bias=False),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, kernel_size=3, stride=1, padding=1, bias=False),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.main(x)


class Generator(nn.Module):
    """Two encoders, a shared residual bottleneck, and two decoders.

    Each encoder maps 3×S×S to 4c×(S/4)×(S/4); the concatenated 8c-channel
    bottleneck feeds both decoders, which emit tanh-bounded images.
    """

    def __init__(self, base_channels: int = 32, residual_blocks: int = 9):
        super().__init__()
        c = base_channels
        self.encoder_x = self._encoder(c)
        self.encoder_y = self._encoder(c)
        self.bottleneck = nn.Sequential(*[ResidualBlock(8 * c) for _ in range(residual_blocks)])
        self.decoder_x = self._decoder(c)
        self.decoder_y = self._decoder(c)

    @classmethod
    def from_config(cls, cfg: NetworkConfig) -> "Generator":
        return cls(base_channels=cfg.base_channels, residual_blocks=cfg.residual_blocks)

    @staticmethod
    def _encoder(c: int) -> nn.Sequential:
        return nn.Sequential(
            *_conv_block(3, c, kernel=7, stride=1, padding=3),
            *_conv_block(c, 2 * c, kernel=4, stride=2, padding=1),
            *_conv_block(2 * c, 4 * c, kernel=4, stride=2, padding=1),
        )

    @staticmethod
    def _decoder(c: int) -> nn.Sequential:
        return nn.Sequential(
            *_upconv_block(8 * c, 4 * c),
            *_upconv_block(4 * c, 2 * c),
            nn.Conv2d(2 * c, 3, kernel_size=7, stride=1, padding=3),
            nn.Tanh(),
        )

    def fuse(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Channel-wise concatenation of both encodings (the bottleneck input)."""
        if x.shape != y.shape:
            raise ShapeError(f"Generator inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"Generator expects B×3×H×W with H, W divisible by 4, got {tuple(x.shape)}")
        return torch.cat([self.encoder_x(x), self.encoder_y(y)], dim=1)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> GeneratorOutput:
        features = self.bottleneck(self.fuse(x, y))
        # decoder_y renders in the Y style, so it produces x_y
        return GeneratorOutput(x_y=self.decoder_y(features), y_x=self.decoder_x(features))


class Discriminator(nn.Module):
    """Five 4×4 convolutions, strides (2, 2, 2, 1, 1); 256×256 input gives a 30×30 grid.

    The first four convolutions are spectrally normalised; scores are raw
    (no sigmoid) for the least-squares objective.
    """

    def __init__(self, base_channels: int = 64):
        super().__init__()
        c = base_channels
        channels = [3, c, 2 * c, 4 * c, 8 * c]
        strides = [2, 2, 2, 1]
        layers: list[nn.Module] = []
        for in_ch, out_ch, stride in zip(channels[:-1], channels[1:], strides):
            layers += [
                spectral_norm(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=stride, padding=1)),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        layers.append(nn.Conv2d(8 * c, 1, kernel_size=4, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    @classmethod
    def from_config(cls, cfg: NetworkConfig) -> "Discriminator":
        return cls(base_channels=cfg.disc_base_channels)

    def normalized_convs(self) -> list[nn.Conv2d]:
        return [m for m in self.model if isinstance(m, nn.Conv2d) and hasattr(m, "parametrizations")]

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() != 4 or img.shape[1] != 3:
            raise ShapeError(f"Discriminator expects B×3×H×W, got {tuple(img.shape)}")
        return self.model(img)


def _spectral_parametrization(module: nn.Module):
    try:
        return module.parametrizations.weight[0]
    except (AttributeError, IndexError):
        raise ValueError(f"{module.__class__.__name__} is not spectrally normalised")


@torch.no_grad()
def spectral_normalize(module: nn.Module, iterations: int = 1) -> torch.Tensor:
    """Run power-iteration steps on ``module``'s (u, v) state; returns W / σ̂.

    Accessing the parametrized weight in training mode performs one power
    iteration per access and rescales by the updated estimate.
    """
    _spectral_parametrization(module)
    was_training = module.training
    module.train()
    weight = module.weight
    for _ in range(iterations - 1):
        weight = module.weight
    module.train(was_training)
    return weight.detach()


@torch.no_grad()
def spectral_norm_estimate(module: nn.Module) -> float:
    """σ̂ = uᵀ W v of the unnormalised weight under the current (u, v) state."""
    param = _spectral_parametrization(module)
    original = module.parametrizations.weight.original
    matrix = param._reshape_weight_to_matrix(original)
    return float(torch.vdot(param._u, torch.mv(matrix, param._v)))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

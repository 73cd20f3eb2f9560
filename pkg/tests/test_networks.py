import pytest
import torch
import torch.nn as nn
from torch.nn.utils.parametrizations import spectral_norm

from gat_transfer.errors import ShapeError
from gat_transfer.networks import (
    Discriminator,
    Generator,
    ResidualBlock,
    count_parameters,
    spectral_norm_estimate,
    spectral_normalize,
)


def images(size: int, batch: int = 1, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(batch, 3, size, size, generator=generator) * 2 - 1


def test_generator_shapes_at_full_canvas():
    torch.manual_seed(0)
    g = Generator(base_channels=32, residual_blocks=1).eval()
    x, y = images(256, seed=1), images(256, seed=2)
    with torch.no_grad():
        assert g.fuse(x, y).shape == (1, 256, 64, 64)
        out = g(x, y)
    assert out.x_y.shape == (1, 3, 256, 256)
    assert out.y_x.shape == (1, 3, 256, 256)


def test_generator_outputs_are_bounded_and_deterministic(tiny_network):
    torch.manual_seed(0)
    g = Generator.from_config(tiny_network).eval()
    x, y = images(32, batch=2, seed=3), images(32, batch=2, seed=4)
    with torch.no_grad():
        first, second = g(x, y), g(x, y)
    assert first.x_y.abs().max() <= 1.0 and first.y_x.abs().max() <= 1.0
    assert torch.equal(first.x_y, second.x_y) and torch.equal(first.y_x, second.y_x)


def test_generator_rejects_bad_shapes(tiny_network):
    g = Generator.from_config(tiny_network)
    with pytest.raises(ShapeError):
        g(images(32), images(36))
    with pytest.raises(ShapeError):
        g(images(30), images(30))


def test_generator_branches_are_symmetric():
    g = Generator(base_channels=8, residual_blocks=2)
    assert count_parameters(g.encoder_x) == count_parameters(g.encoder_y)
    assert count_parameters(g.decoder_x) == count_parameters(g.decoder_y)
    assert g.encoder_x[0].out_channels == 8
    assert g.encoder_x[-3].out_channels == 32


def test_discriminator_grid_is_30x30():
    torch.manual_seed(0)
    d = Discriminator(base_channels=8).eval()
    with torch.no_grad():
        scores = d(images(256))
    assert scores.shape == (1, 1, 30, 30)
    assert len(d.normalized_convs()) == 4


def test_discriminator_is_deterministic_in_eval(tiny_network):
    d = Discriminator.from_config(tiny_network).eval()
    img = images(32, seed=5)
    with torch.no_grad():
        assert torch.equal(d(img), d(img.clone()))


def test_zero_final_layer_gives_zero_grid(tiny_network):
    d = Discriminator.from_config(tiny_network).eval()
    final = d.model[-1]
    with torch.no_grad():
        final.weight.zero_()
        final.bias.zero_()
        assert torch.count_nonzero(d(images(32))) == 0


def test_discriminator_rejects_bad_shape(tiny_network):
    with pytest.raises(ShapeError):
        Discriminator.from_config(tiny_network)(torch.zeros(1, 1, 32, 32))


def _zero_convs(block: ResidualBlock) -> ResidualBlock:
    with torch.no_grad():
        for module in block.modules():
            if isinstance(module, nn.Conv2d):
                module.weight.zero_()
    return block


def test_residual_block_preserves_shape():
    block = ResidualBlock(6)
    x = torch.randn(2, 6, 8, 8)
    assert block(x).shape == x.shape


def test_residual_block_with_zero_weights_is_identity():
    block = _zero_convs(ResidualBlock(4))
    x = torch.randn(1, 4, 8, 8)
    assert torch.equal(block(x), x)


def test_residual_jacobian_at_zero_weights_is_identity():
    block = _zero_convs(ResidualBlock(2)).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    jacobian = torch.autograd.functional.jacobian(block, x).reshape(32, 32)
    torch.testing.assert_close(jacobian, torch.eye(32, dtype=torch.float64))


def _normalized_linear(weight: torch.Tensor) -> nn.Linear:
    layer = spectral_norm(nn.Linear(weight.shape[1], weight.shape[0], bias=False))
    with torch.no_grad():
        layer.parametrizations.weight.original.copy_(weight)
    return layer


def test_spectral_norm_matches_singular_values():
    generator = torch.Generator().manual_seed(0)
    u, _ = torch.linalg.qr(torch.randn(8, 8, generator=generator))
    v, _ = torch.linalg.qr(torch.randn(8, 8, generator=generator))
    spectrum = torch.tensor([5.0, 3.0, 2.0, 1.5, 1.0, 0.5, 0.2, 0.1])
    weight = u @ torch.diag(spectrum) @ v.T

    layer = _normalized_linear(weight)
    normalized = spectral_normalize(layer, iterations=50)
    assert spectral_norm_estimate(layer) == pytest.approx(float(torch.linalg.svdvals(weight)[0]), abs=1e-3)
    assert float(torch.linalg.svdvals(normalized)[0]) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("scale", [1.0, 3.0])
def test_spectral_norm_of_scaled_identity(scale):
    layer = _normalized_linear(scale * torch.eye(6))
    normalized = spectral_normalize(layer, iterations=10)
    assert spectral_norm_estimate(layer) == pytest.approx(scale, rel=1e-4)
    torch.testing.assert_close(normalized, torch.eye(6), rtol=1e-4, atol=1e-4)


def test_spectral_normalize_requires_parametrization():
    with pytest.raises(ValueError):
        spectral_normalize(nn.Linear(3, 3))


def test_discriminator_convs_are_unit_norm_after_power_iteration():
    torch.manual_seed(0)
    d = Discriminator(base_channels=8)
    convs = d.normalized_convs()
    assert len(convs) == 4
    for conv in convs:
        weight = spectral_normalize(conv, iterations=50)
        sigma = float(torch.linalg.svdvals(weight.reshape(weight.shape[0], -1))[0])
        assert sigma == pytest.approx(1.0, abs=1e-2)

import pytest
import torch

from fusionq.common_types import DTYPE
from fusionq.encodings import (
    PositionalEncoder,
    UncertaintyPositionalEncoder,
    check_distribution,
    encode_pe,
    encode_upe,
)
from fusionq.errors import DomainError
from fusionq.numerics import sinpos_encode


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_positional_encoder_zero_mlp_gives_bias():
    encoder = PositionalEncoder(3, 8, 16, channels_per_scalar=4)
    zero_(encoder)
    bias = torch.arange(8, dtype=DTYPE)
    with torch.no_grad():
        encoder.mlp.layers[-1].bias.copy_(bias)
    out = encode_pe(encoder, torch.randn(5, 3, dtype=DTYPE))
    assert torch.equal(out, bias.expand(5, 8))


def test_positional_encoder_composition():
    torch.manual_seed(0)
    encoder = PositionalEncoder(2, 4, 6, channels_per_scalar=2, temperature=100.0)
    points = torch.tensor([[1.0, -2.0], [1.0, -2.0], [0.5, 3.0]], dtype=DTYPE)
    out = encoder(points)
    assert torch.equal(out[0], out[1])
    first, second = encoder.mlp.layers
    expected = second(torch.relu(first(sinpos_encode(points, 2, 100.0))))
    assert torch.allclose(out, expected, atol=1e-12)


def test_uncertainty_encoder_zero_inner_mlps():
    encoder = UncertaintyPositionalEncoder(4, 6, 8)
    zero_(encoder.base)
    zero_(encoder.gate)
    base_bias = torch.linspace(-1, 1, 6, dtype=DTYPE)
    with torch.no_grad():
        encoder.base.layers[-1].bias.copy_(base_bias)
    probabilities = torch.full((3, 4), 0.25, dtype=DTYPE)
    out = encode_upe(encoder, torch.randn(3, 4, 3, dtype=DTYPE), probabilities)
    expected = encoder.out(0.5 * base_bias).expand(3, 6)
    assert torch.allclose(out, expected, atol=1e-12)


def test_uncertainty_encoder_gate():
    torch.manual_seed(1)
    encoder = UncertaintyPositionalEncoder(2, 4, 5, position_scale=10.0)
    positions = torch.randn(2, 2, 3, dtype=DTYPE)
    probabilities = torch.tensor([[0.3, 0.7], [0.3, 0.7]], dtype=DTYPE)
    positions[1] = positions[0]
    out = encoder(positions, probabilities)
    assert torch.equal(out[0], out[1])

    expected = encoder.out(encoder.base(positions.flatten(-2) / 10.0) * torch.sigmoid(encoder.gate(probabilities)))
    assert torch.allclose(out, expected, atol=1e-12)


def test_unnormalized_distribution_is_rejected():
    check_distribution(torch.tensor([[0.5, 0.5 + 1e-9]], dtype=DTYPE))
    with pytest.raises(DomainError, match="sum to 1"):
        check_distribution(torch.tensor([[0.5, 0.6]], dtype=DTYPE))
    encoder = UncertaintyPositionalEncoder(2, 4, 4)
    with pytest.raises(DomainError):
        encoder(torch.zeros(1, 2, 3, dtype=DTYPE), torch.tensor([[0.2, 0.2]], dtype=DTYPE))

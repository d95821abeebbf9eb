"""Positional encodings of queries, pillars and history tokens."""

import torch
from torch import nn

from fusionq.common_types import Tensor
from fusionq.errors import DomainError
from fusionq.numerics import Mlp, sinpos_encode


NORMALIZATION_TOLERANCE = 1e-6


def check_distribution(probabilities: Tensor, /, *, tolerance: float = NORMALIZATION_TOLERANCE) -> None:
    """Raise `DomainError` unless every row sums to 1 within `tolerance`."""
    if probabilities.numel() == 0:
        return
    drift = (probabilities.sum(dim=-1) - 1).abs().max().item()
    if drift > tolerance:
        msg = "Every probability row must sum to 1."
        hint = f"Instead, a row is off by {drift:.3e}."
        raise DomainError(msg + "\n" + hint)


class PositionalEncoder(nn.Module):
    """PE(r) = MLP(SinPos(r)) for points with `n_coords` coordinates."""

    def __init__(self, n_coords: int, width: int, hidden: int,
                 /, *,
                 channels_per_scalar: int = 16,
                 temperature: float = 10000.0) -> None:
        super().__init__()
        self.channels_per_scalar = channels_per_scalar
        self.temperature = temperature
        self.mlp = Mlp([n_coords * channels_per_scalar, hidden, width])

    def forward(self, points: Tensor) -> Tensor:
        return self.mlp(sinpos_encode(points, self.channels_per_scalar, self.temperature))


class UncertaintyPositionalEncoder(nn.Module):
    """U-PE(s, u) = MLP(MLP(Flat(s) / scale) ⊙ σ(MLP(u))).

    The base encoding of the sampling positions is gated by their probabilities.
    `position_scale` divides the meters before the first layer.
    """

    def __init__(self, n_positions: int, width: int, hidden: int,
                 /, *,
                 position_scale: float = 1.0) -> None:
        super().__init__()
        self.position_scale = position_scale
        self.base = Mlp([3 * n_positions, hidden, width])
        self.gate = Mlp([n_positions, hidden, width])
        self.out = Mlp([width, hidden, width])

    def forward(self, positions: Tensor, probabilities: Tensor) -> Tensor:
        check_distribution(probabilities)
        base = self.base(positions.flatten(-2) / self.position_scale)
        return self.out(base * torch.sigmoid(self.gate(probabilities)))


def encode_pe(encoder: PositionalEncoder, points: Tensor) -> Tensor:
    return encoder(points)


def encode_upe(encoder: UncertaintyPositionalEncoder, positions: Tensor, probabilities: Tensor) -> Tensor:
    return encoder(positions, probabilities)

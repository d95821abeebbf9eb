"""The fusion decoder.

Every layer runs self-attention over the live queries (history tokens join as
extra keys and values), projection-based deformable attention into the camera
feature maps, attention over the sparse pillars and a feed-forward block, each
followed by a residual add and layer norm. The layer ends with the calibration
of the image-query probabilities, after which anchors and U-PE are recomputed.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import torch
from torch import nn

from fusionq.common_types import DTYPE, Tensor
from fusionq.encodings import PositionalEncoder, UncertaintyPositionalEncoder
from fusionq.errors import ConfigurationError
from fusionq.geometry import CameraModel, bilinear_sample, project_world_to_pixel
from fusionq.history import HistoryTokens
from fusionq.numerics import Attention, Mlp, layer_norm, softmax
from fusionq.query_gen import ImageQuerySet, PointCloudQuerySet, anchor_from_distribution


PROBABILITY_FLOOR = 1e-12
CLASS_PRIOR = 0.01
MAX_LOG_SIZE = 10.0
REGRESSION_CHANNELS = 10


@dataclass(slots=True, frozen=True)
class DecoderConfig:
    layers: int = 6
    width: int = 64
    heads: int = 4
    samples: int = 4
    n_classes: int = 3
    n_positions: int = 16
    image_feature_dim: int = 7
    hidden: int = 128
    ffn_hidden: int = 128
    use_cross_attention: bool = True
    offset_scale: float = 4.0
    position_scale: float = 10.0
    channels_per_scalar: int = 16
    temperature: float = 10000.0

    def __post_init__(self) -> None:
        if self.layers < 1 or self.samples < 1:
            msg = "The decoder needs at least one layer and one deformable sample."
            hint = f"Instead, layers={self.layers} and samples={self.samples} are given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.heads < 1 or self.width % self.heads:
            msg = "The model width must be divisible by the head count."
            hint = f"Instead, width={self.width} and heads={self.heads} are given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.offset_scale <= 1:
            msg = "The deformable offset scale must exceed 1 m."
            hint = f"Instead, offset_scale={self.offset_scale} is given."
            raise ConfigurationError(msg + "\n" + hint)


class CameraView(Protocol):
    camera: CameraModel
    feature_map: Tensor


@dataclass(slots=True, eq=False, match_args=False)
class PillarTokens:
    """Pillars already projected to the model width: positions P×2, contents P×C."""
    positions: Tensor
    contents: Tensor

    def __len__(self) -> int:
        return self.contents.shape[0]

    @classmethod
    def empty(cls, width: int) -> "PillarTokens":
        return cls(torch.zeros(0, 2, dtype=DTYPE), torch.zeros(0, width, dtype=DTYPE))


class ResidualNorm(nn.Module):
    def __init__(self, width: int) -> None:
        super().__init__()
        self.gain = nn.Parameter(torch.ones(width, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(width, dtype=DTYPE))

    def forward(self, x: Tensor, update: Tensor) -> Tensor:
        return layer_norm(x + update, self.gain, self.bias)


class SelfAttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        self.attention = Attention(width, heads)
        self.norm = ResidualNorm(width)

    def forward(self, contents: Tensor, encodings: Tensor, history: HistoryTokens) -> Tensor:
        if contents.shape[0] == 0:
            return contents
        queries = contents + encodings
        tokens = torch.cat((queries, history.contents + history.encodings))
        return self.norm(contents, self.attention(queries, tokens, tokens))


class DeformableImageCrossAttention(nn.Module):
    """Sum over views v and samples k of A_vk · W · F_v(Proj_v(a + Δa_k)).

    Offsets are world-frame meters bounded by ±`offset_scale`, shared by all
    views. The logits are per sample; the softmax runs over the valid (v, k)
    pairs of each query, so a query with no valid sample aggregates zero.
    """

    def __init__(self, width: int, feature_dim: int, samples: int, offset_scale: float) -> None:
        super().__init__()
        self.samples = samples
        self.offset_scale = offset_scale
        self.offsets = nn.Linear(width, 3 * samples, dtype=DTYPE)
        self.logits = nn.Linear(width, samples, dtype=DTYPE)
        self.value_proj = nn.Linear(feature_dim, width, bias=False, dtype=DTYPE)
        self.norm = ResidualNorm(width)
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self) -> None:
        # samples start on a 1 m circle around the anchor
        nn.init.zeros_(self.offsets.weight)
        angles = 2 * math.pi * torch.arange(self.samples, dtype=DTYPE) / self.samples
        ring = torch.stack((angles.cos(), angles.sin(), torch.zeros_like(angles)), dim=-1)
        self.offsets.bias.copy_(torch.atanh(ring / self.offset_scale).reshape(-1))
        nn.init.zeros_(self.logits.weight)
        nn.init.zeros_(self.logits.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)

    def sample_points(self, contents: Tensor, anchors: Tensor) -> Tensor:
        offsets = torch.tanh(self.offsets(contents)).unflatten(-1, (self.samples, 3)) * self.offset_scale
        return anchors.unsqueeze(-2) + offsets

    def aggregate(self, contents: Tensor, anchors: Tensor, views: Sequence[CameraView]) -> Tensor:
        """The attention-weighted, value-projected features (M×C) before the residual."""
        n = contents.shape[0]
        width = self.value_proj.out_features
        if n == 0 or not views:
            return contents.new_zeros(n, width)

        points = self.sample_points(contents, anchors)
        features, valid = [], []
        for view in views:
            cam = view.camera
            projection = project_world_to_pixel(cam, points)
            u, v = projection.pixels.unbind(-1)
            map_h, map_w, _ = view.feature_map.shape
            inside = projection.valid & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
            features.append(bilinear_sample(view.feature_map, u * map_w / cam.width, v * map_h / cam.height))
            valid.append(inside)
        features_all = torch.stack(features, dim=1)          # M×V×K×F
        valid_all = torch.stack(valid, dim=1).flatten(1)     # M×(V·K)

        logits = self.logits(contents).unsqueeze(1).expand(n, len(views), self.samples).flatten(1)
        masked = logits.masked_fill(~valid_all, -math.inf)
        peak = masked.amax(dim=-1, keepdim=True)
        peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak)).detach()
        weights = torch.exp(masked - peak)
        weights = weights / weights.sum(dim=-1, keepdim=True).clamp_min(torch.finfo(DTYPE).tiny)

        pooled = (weights.unsqueeze(-1) * features_all.flatten(1, 2)).sum(dim=1)
        return self.value_proj(pooled)

    def forward(self, contents: Tensor, anchors: Tensor, views: Sequence[CameraView]) -> Tensor:
        return self.norm(contents, self.aggregate(contents, anchors, views))


class PillarCrossAttention(nn.Module):
    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        self.attention = Attention(width, heads)
        self.norm = ResidualNorm(width)

    def forward(self, contents: Tensor, encodings: Tensor, pillars: PillarTokens,
                pillar_encodings: Tensor) -> Tensor:
        if len(pillars) == 0:
            return self.norm(contents, torch.zeros_like(contents))
        update = self.attention(contents + encodings, pillars.contents + pillar_encodings, pillars.contents)
        return self.norm(contents, update)


class FeedForward(nn.Module):
    def __init__(self, width: int, hidden: int) -> None:
        super().__init__()
        self.mlp = Mlp([width, hidden, width])
        self.norm = ResidualNorm(width)

    def forward(self, contents: Tensor) -> Tensor:
        return self.norm(contents, self.mlp(contents))


def calibrate_probabilities(probabilities: Tensor, residual: Tensor) -> Tensor:
    """softmax(log u + residual) with u floored at `PROBABILITY_FLOOR`."""
    return softmax(torch.log(probabilities.clamp_min(PROBABILITY_FLOOR)) + residual)


class QueryCalibration(nn.Module):
    """u ← softmax(log u + MLP(c)); the sampling positions stay where they are."""

    def __init__(self, width: int, hidden: int, n_positions: int) -> None:
        super().__init__()
        self.mlp = Mlp([width, hidden, n_positions], zero_last=True)

    def forward(self, probabilities: Tensor, contents: Tensor) -> Tensor:
        return calibrate_probabilities(probabilities, self.mlp(contents))


class OutputHeads(nn.Module):
    """z^cls = MLP(c), z^reg = MLP(c) + [a; 0] with exponentiated sizes.

    Regression rows are (x, y, z, w, l, h, sin rot, cos rot, vx, vy).
    """

    def __init__(self, width: int, hidden: int, n_classes: int) -> None:
        super().__init__()
        self.classifier = Mlp([width, hidden, n_classes])
        self.regressor = Mlp([width, hidden, REGRESSION_CHANNELS])
        with torch.no_grad():
            self.classifier.layers[-1].bias.fill_(-math.log((1 - CLASS_PRIOR) / CLASS_PRIOR))

    def forward(self, contents: Tensor, anchors: Tensor) -> tuple[Tensor, Tensor]:
        raw = self.regressor(contents)
        regression = torch.cat((
            raw[..., :3] + anchors,
            torch.exp(raw[..., 3:6].clamp(max=MAX_LOG_SIZE)),
            raw[..., 6:],
        ), dim=-1)
        return self.classifier(contents), regression


@dataclass(slots=True, eq=False, match_args=False)
class LayerOutput:
    """State after one decoder layer; image probabilities are M^img×n."""
    contents: Tensor
    anchors: Tensor
    probabilities: Tensor
    logits: Tensor
    regression: Tensor


@dataclass(slots=True, eq=False, match_args=False)
class DecoderOutput:
    layers: list[LayerOutput]
    initial_anchors: Tensor
    initial_probabilities: Tensor
    n_pc: int
    n_img: int = field(default=0)

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]

    @property
    def logits(self) -> Tensor:
        return self.final.logits

    @property
    def regression(self) -> Tensor:
        return self.final.regression

    @property
    def anchors(self) -> Tensor:
        return self.final.anchors

    def image_anchor_curve(self) -> list[Tensor]:
        """Image-query anchors before the first layer and after every layer."""
        return [self.initial_anchors[self.n_pc:]] + [layer.anchors[self.n_pc:] for layer in self.layers]


class DecoderLayer(nn.Module):
    def __init__(self, cfg: DecoderConfig) -> None:
        super().__init__()
        self.self_attention = SelfAttentionBlock(cfg.width, cfg.heads)
        self.image_attention = DeformableImageCrossAttention(
            cfg.width, cfg.image_feature_dim, cfg.samples, cfg.offset_scale,
        )
        self.pillar_attention = PillarCrossAttention(cfg.width, cfg.heads)
        self.feed_forward = FeedForward(cfg.width, cfg.ffn_hidden)
        self.calibration = QueryCalibration(cfg.width, cfg.hidden, cfg.n_positions)


class FusionDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        encoder_kwargs = {"channels_per_scalar": cfg.channels_per_scalar, "temperature": cfg.temperature}
        self.point_encoder = PositionalEncoder(3, cfg.width, cfg.hidden, **encoder_kwargs)
        self.pillar_encoder = PositionalEncoder(2, cfg.width, cfg.hidden, **encoder_kwargs)
        self.uncertainty_encoder = UncertaintyPositionalEncoder(
            cfg.n_positions, cfg.width, cfg.hidden, position_scale=cfg.position_scale,
        )
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
        self.heads = OutputHeads(cfg.width, cfg.hidden, cfg.n_classes)

    def encode(self, pc_positions: Tensor, positions: Tensor, probabilities: Tensor) -> Tensor:
        return torch.cat((self.point_encoder(pc_positions), self.uncertainty_encoder(positions, probabilities)))

    def forward(self, pc: PointCloudQuerySet, img: ImageQuerySet, views: Sequence[CameraView],
                pillars: PillarTokens, history: HistoryTokens) -> DecoderOutput:
        n_pc, n_img = len(pc), len(img)
        positions = img.positions
        probabilities = img.probabilities
        contents = torch.cat((pc.contents, img.contents))
        anchors = torch.cat((pc.positions, anchor_from_distribution(positions, probabilities)))
        initial_anchors, initial_probabilities = anchors, probabilities
        pillar_encodings = self.pillar_encoder(pillars.positions)

        outputs = []
        for layer in self.layers:
            encodings = self.encode(pc.positions, positions, probabilities)
            contents = layer.self_attention(contents, encodings, history)
            if self.cfg.use_cross_attention:
                contents = layer.image_attention(contents, anchors, views)
                contents = layer.pillar_attention(contents, encodings, pillars, pillar_encodings)
            contents = layer.feed_forward(contents)
            probabilities = layer.calibration(probabilities, contents[n_pc:])
            anchors = torch.cat((pc.positions, anchor_from_distribution(positions, probabilities)))
            logits, regression = self.heads(contents, anchors)
            outputs.append(LayerOutput(contents, anchors, probabilities, logits, regression))

        return DecoderOutput(outputs, initial_anchors, initial_probabilities, n_pc, n_img)


def run_decoder(decoder: FusionDecoder, pc: PointCloudQuerySet, img: ImageQuerySet,
                views: Sequence[CameraView], pillars: PillarTokens,
                history: HistoryTokens | None = None) -> DecoderOutput:
    if history is None:
        history = HistoryTokens.empty(decoder.cfg.width)
    return decoder(pc, img, views, pillars, history)

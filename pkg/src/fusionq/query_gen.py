"""Modality-specific object queries.

Point-cloud queries carry a content vector and the 3D center of their source
box. Image queries carry a content vector and a categorical distribution over
sampling positions placed at fixed depths along camera rays.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum, unique
from typing import Protocol

import torch
from torch import nn

from fusionq.common_types import DTYPE, Tensor
from fusionq.encodings import check_distribution
from fusionq.errors import ConfigurationError, ShapeError
from fusionq.geometry import (
    CameraModel,
    equivalent_intrinsics_many,
    roi_align_many,
    unproject_pixel_at_depth,
)
from fusionq.numerics import Mlp, sinpos_encode, softmax


PC_QUERY_CAP = 200
IMG_QUERY_CAP = 60
GEOMETRY_FEATURES = 8


@unique
class Formulation(StrEnum):
    """How an image query describes its position."""
    DISTRIBUTION = "distribution"
    POINT = "point"


@dataclass(slots=True, frozen=True, eq=False)
class DepthBins:
    """`n_d` depths spaced linearly over [d_min, d_max], both ends included."""
    d_min: float
    d_max: float
    n_d: int
    values: Tensor


def make_depth_bins(d_min: float, d_max: float, n_d: int) -> DepthBins:
    if n_d < 2 or not 0 < d_min < d_max:
        msg = "Depth bins need n_d >= 2 and 0 < d_min < d_max."
        hint = f"Instead, {d_min=}, {d_max=} and {n_d=} are given."
        raise ConfigurationError(msg + "\n" + hint)
    return DepthBins(float(d_min), float(d_max), n_d, torch.linspace(d_min, d_max, n_d, dtype=DTYPE))


def top_scored(scores: Tensor, cap: int) -> Tensor:
    """Indices of the `cap` best scores; ties keep the input order."""
    return torch.sort(scores, descending=True, stable=True).indices[:cap]


@dataclass(slots=True, eq=False, match_args=False)
class PointCloudQuerySet:
    """Contents (M×C), positions (M×3), source boxes (M×7), appearance (M×F)
    and detector scores (M) of the point-cloud queries.
    """
    contents: Tensor
    positions: Tensor
    boxes: Tensor
    appearance: Tensor
    scores: Tensor

    def __len__(self) -> int:
        return self.contents.shape[0]

    @classmethod
    def empty(cls, width: int, feature_dim: int) -> "PointCloudQuerySet":
        zeros = torch.zeros
        return cls(zeros(0, width, dtype=DTYPE), zeros(0, 3, dtype=DTYPE), zeros(0, 7, dtype=DTYPE),
                   zeros(0, feature_dim, dtype=DTYPE), zeros(0, dtype=DTYPE))


@dataclass(slots=True, eq=False, match_args=False)
class ImageQuerySet:
    """Image queries of all views.

    `positions` (M×n×3) are the world-frame sampling positions s^img,
    `probabilities` (M×n) their distribution u^img and `depths` (M×n) the
    camera-frame depth of every position. `boxes` (M×4) and `scores` (M) come
    from the 2D detections, `views` (M) names the source view and `intrinsics`
    (M×4×4) holds the equivalent intrinsics.
    """
    contents: Tensor
    positions: Tensor
    probabilities: Tensor
    depths: Tensor
    boxes: Tensor
    scores: Tensor
    views: Tensor
    intrinsics: Tensor

    def __len__(self) -> int:
        return self.contents.shape[0]

    @property
    def anchors(self) -> Tensor:
        return anchor_from_distribution(self.positions, self.probabilities)

    @classmethod
    def empty(cls, width: int, n_positions: int) -> "ImageQuerySet":
        zeros = torch.zeros
        return cls(
            zeros(0, width, dtype=DTYPE), zeros(0, n_positions, 3, dtype=DTYPE),
            zeros(0, n_positions, dtype=DTYPE), zeros(0, n_positions, dtype=DTYPE),
            zeros(0, 4, dtype=DTYPE), zeros(0, dtype=DTYPE), zeros(0, dtype=torch.long),
            zeros(0, 4, 4, dtype=DTYPE),
        )

    @classmethod
    def concat(cls, parts: Sequence["ImageQuerySet"], width: int, n_positions: int) -> "ImageQuerySet":
        if not parts:
            return cls.empty(width, n_positions)
        return cls(*(torch.cat([getattr(p, name) for p in parts]) for name in cls.__slots__))


def anchor_from_distribution(positions: Tensor, probabilities: Tensor) -> Tensor:
    """Probability-weighted mean of the sampling positions, (..., n, 3) -> (..., 3)."""
    check_distribution(probabilities)
    return (probabilities.unsqueeze(-1) * positions).sum(dim=-2)


class PointCloudQueryGenerator(nn.Module):
    """c^pc = MLP(o^pc + MLP(SinPos(b^pc))), r^pc = box centers."""

    def __init__(self, feature_dim: int, width: int, hidden: int,
                 /, *,
                 channels_per_scalar: int = 16,
                 temperature: float = 10000.0,
                 cap: int = PC_QUERY_CAP) -> None:
        super().__init__()
        self.feature_dim = feature_dim
        self.width = width
        self.channels_per_scalar = channels_per_scalar
        self.temperature = temperature
        self.cap = cap
        self.box_encoder = Mlp([7 * channels_per_scalar, hidden, feature_dim])
        self.content = Mlp([feature_dim, hidden, width])

    def forward(self, boxes: Tensor, scores: Tensor, appearance: Tensor) -> PointCloudQuerySet:
        if not boxes.shape[0] == scores.shape[0] == appearance.shape[0]:
            msg = "Boxes, scores and appearance features must have the same row count."
            hint = f"Instead, {boxes.shape[0]}, {scores.shape[0]} and {appearance.shape[0]} are given."
            raise ShapeError(msg + "\n" + hint)
        if boxes.shape[0] == 0:
            return PointCloudQuerySet.empty(self.width, self.feature_dim)

        order = top_scored(scores, self.cap)
        boxes, scores, appearance = boxes[order], scores[order], appearance[order]
        encoded = self.box_encoder(sinpos_encode(boxes, self.channels_per_scalar, self.temperature))
        contents = self.content(appearance + encoded)
        return PointCloudQuerySet(contents, boxes[:, :3], boxes, appearance, scores)


class ViewLike(Protocol):
    """What the image query generator needs to know about one view."""
    camera: CameraModel
    feature_map: Tensor
    boxes: Tensor
    scores: Tensor


class ImageQueryGenerator(nn.Module):
    """Uncertainty-aware image queries from 2D detections.

    Content: MLP([Pool(Conv(RoIAlign(F, b))); Flat(K^i)]). Heads: per sampling
    position an RoI-relative 2D offset squashed into the box and a probability
    logit (or, with the point formulation, a single depth).
    """

    def __init__(self, image_feature_dim: int, width: int, hidden: int, bins: DepthBins,
                 /, *,
                 conv_dim: int = 32,
                 roi_size: tuple[int, int] = (7, 7),
                 cap: int = IMG_QUERY_CAP,
                 formulation: Formulation = Formulation.DISTRIBUTION,
                 intrinsic_scale: float = 1000.0) -> None:
        super().__init__()
        self.width = width
        self.bins = bins
        self.roi_size = roi_size
        self.cap = cap
        self.formulation = Formulation(formulation)
        self.intrinsic_scale = intrinsic_scale
        self.conv = nn.Linear(image_feature_dim, conv_dim, dtype=DTYPE)
        self.content = Mlp([conv_dim + GEOMETRY_FEATURES, hidden, width])
        self.head = Mlp([width, hidden, 3 * self.n_positions])

    @property
    def n_positions(self) -> int:
        return self.bins.n_d if self.formulation is Formulation.DISTRIBUTION else 1

    def forward(self, views: Sequence[ViewLike]) -> ImageQuerySet:
        parts = [self._view_queries(view, index) for index, view in enumerate(views)]
        return ImageQuerySet.concat([p for p in parts if len(p)], self.width, self.n_positions)

    def _view_queries(self, view: ViewLike, view_index: int) -> ImageQuerySet:
        cam = view.camera
        boxes, scores = view.boxes.reshape(-1, 4), view.scores.reshape(-1)
        x_min, y_min, x_max, y_max = boxes.unbind(-1)
        inside = ((x_min >= 0) & (y_min >= 0) & (x_max <= cam.width) & (y_max <= cam.height)
                  & (x_max > x_min) & (y_max > y_min))
        boxes, scores = boxes[inside], scores[inside]
        order = top_scored(scores, self.cap)
        boxes, scores = boxes[order], scores[order]
        n = boxes.shape[0]
        if n == 0:
            return ImageQuerySet.empty(self.width, self.n_positions)

        map_h, map_w, _ = view.feature_map.shape
        to_map = torch.tensor([map_w / cam.width, map_h / cam.height] * 2, dtype=DTYPE)
        rois = roi_align_many(view.feature_map, boxes * to_map, self.roi_size)
        pooled = self.conv(rois).mean(dim=(1, 2))

        intrinsics = equivalent_intrinsics_many(cam, boxes, self.roi_size)
        image = torch.tensor([cam.ox, cam.oy, cam.width, cam.height], dtype=DTYPE).expand(n, 4)
        geometry = torch.cat((
            intrinsics[:, 0, 0:1], intrinsics[:, 1, 1:2], intrinsics[:, 0, 2:3], intrinsics[:, 1, 2:3], image,
        ), dim=-1) / self.intrinsic_scale
        contents = self.content(torch.cat((pooled, geometry), dim=-1))

        raw = self.head(contents).view(n, self.n_positions, 3)
        corner = boxes[:, None, :2]
        extent = boxes[:, None, 2:] - corner
        pixels = corner + torch.sigmoid(raw[..., :2]) * extent
        match self.formulation:
            case Formulation.DISTRIBUTION:
                probabilities = softmax(raw[..., 2])
                depths = self.bins.values.expand(n, -1)
            case Formulation.POINT:
                probabilities = torch.ones(n, 1, dtype=DTYPE)
                span = self.bins.d_max - self.bins.d_min
                depths = self.bins.d_min + torch.sigmoid(raw[..., 2]) * span
        positions = unproject_pixel_at_depth(cam, pixels, depths)
        views = torch.full((n,), view_index, dtype=torch.long)
        return ImageQuerySet(contents, positions, probabilities, depths, boxes, scores, views, intrinsics)


def gen_pc_queries(generator: PointCloudQueryGenerator,
                   boxes: Tensor, scores: Tensor, appearance: Tensor) -> PointCloudQuerySet:
    return generator(boxes, scores, appearance)


def gen_img_queries(generator: ImageQueryGenerator, views: Sequence[ViewLike]) -> ImageQuerySet:
    return generator(views)

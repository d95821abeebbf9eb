"""The complete fusion model: query generators, pillar projection, history
transform and decoder in one checkpointable module.
"""

from dataclasses import dataclass
from enum import StrEnum, unique

import torch
from torch import nn

from fusionq.common_types import DTYPE
from fusionq.config import ModelConfig
from fusionq.dataset import FrameSample
from fusionq.decoder import DecoderConfig, DecoderOutput, FusionDecoder, PillarTokens
from fusionq.history import HistoryQueue, HistoryTokens, HistoryTransform
from fusionq.query_gen import (
    ImageQueryGenerator,
    ImageQuerySet,
    PointCloudQueryGenerator,
    PointCloudQuerySet,
    make_depth_bins,
)


@unique
class Modality(StrEnum):
    """Which sensors feed a forward pass."""
    CAMERA = "camera"
    LIDAR = "lidar"
    BOTH = "both"

    @property
    def uses_camera(self) -> bool:
        return self is not Modality.LIDAR

    @property
    def uses_lidar(self) -> bool:
        return self is not Modality.CAMERA


@dataclass(slots=True, eq=False, match_args=False)
class ModelOutput:
    decoder: DecoderOutput
    image_queries: ImageQuerySet
    pc_queries: PointCloudQuerySet


class FusionModel(nn.Module):
    def __init__(self, cfg: ModelConfig, /, *, n_classes: int, image_feature_dim: int,
                 point_feature_dim: int) -> None:
        super().__init__()
        self.cfg = cfg
        self.bins = make_depth_bins(cfg.d_min, cfg.d_max, cfg.n_d)
        self.pc_generator = PointCloudQueryGenerator(
            point_feature_dim, cfg.width, cfg.hidden,
            channels_per_scalar=cfg.channels_per_scalar, cap=cfg.pc_cap,
        )
        self.img_generator = ImageQueryGenerator(
            image_feature_dim, cfg.width, cfg.hidden, self.bins,
            conv_dim=cfg.conv_dim,
            roi_size=(cfg.roi_size, cfg.roi_size),
            cap=cfg.img_cap,
            formulation=cfg.formulation,
        )
        self.pillar_proj = nn.Linear(point_feature_dim, cfg.width, dtype=DTYPE)
        self.history_transform = HistoryTransform(
            cfg.width, cfg.hidden, channels_per_scalar=cfg.channels_per_scalar,
        )
        self.decoder = FusionDecoder(DecoderConfig(
            layers=cfg.layers,
            width=cfg.width,
            heads=cfg.heads,
            samples=cfg.samples,
            n_classes=n_classes,
            n_positions=self.img_generator.n_positions,
            image_feature_dim=image_feature_dim,
            hidden=cfg.hidden,
            ffn_hidden=cfg.ffn_hidden,
            use_cross_attention=cfg.use_cross_attention,
            offset_scale=cfg.offset_scale,
            position_scale=cfg.position_scale,
            channels_per_scalar=cfg.channels_per_scalar,
        ))

    def pillar_tokens(self, sample: FrameSample) -> PillarTokens:
        pillars = sample.pillars
        positions = torch.from_numpy(pillars.positions).to(DTYPE)
        return PillarTokens(positions, self.pillar_proj(torch.from_numpy(pillars.contents).to(DTYPE)))

    def forward(self, sample: FrameSample, history: HistoryQueue | None = None,
                modality: Modality = Modality.BOTH) -> ModelOutput:
        """Decode one frame; a missing modality leaves its queries and its
        cross-attention source empty.
        """
        width = self.cfg.width
        if modality.uses_lidar:
            pc = self.pc_generator(sample.pc_boxes, sample.pc_scores, sample.pc_appearance)
            pillars = self.pillar_tokens(sample)
        else:
            pc = PointCloudQuerySet.empty(width, self.pc_generator.feature_dim)
            pillars = PillarTokens.empty(width)
        if modality.uses_camera:
            img = self.img_generator(sample.views)
            views = sample.views
        else:
            img = ImageQuerySet.empty(width, self.img_generator.n_positions)
            views = []

        if history is None or len(history) == 0:
            tokens = HistoryTokens.empty(width)
        else:
            tokens = self.history_transform(history, sample.ego_pose, sample.timestamp, self.decoder.point_encoder)
        output = self.decoder(pc, img, views, pillars, tokens)
        return ModelOutput(output, img, pc)

"""Model-ready samples prepared from simulated frames."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from fusionq.common_types import DTYPE, Tensor
from fusionq.errors import ConfigurationError
from fusionq.geometry import MIN_DEPTH, CameraModel, project_box3d_to_box2d
from fusionq.oracles import (
    OracleConfig,
    box_center_depth,
    class_codebook,
    oracle_detect_2d,
    oracle_detect_3d,
    point_features,
    synthesize_feature_maps,
)
from fusionq.pillars import PillarFeatureSet, pillarize
from fusionq.scenesim import SceneFrame, boxes_tensor


@dataclass(slots=True, eq=False, match_args=False)
class ViewInputs:
    """One camera with its feature map, 2D detections and projected GT.

    `gt_boxes` (G_v×4) are the clipped projections of the GT boxes visible in
    this view, `gt_depths` the camera-frame depths of their centers and
    `gt_indices` their rows in the frame's GT.
    """
    camera: CameraModel
    feature_map: Tensor
    boxes: Tensor
    scores: Tensor
    gt_boxes: Tensor
    gt_depths: Tensor
    gt_indices: Tensor


@dataclass(slots=True, eq=False, match_args=False)
class FrameSample:
    index: int
    timestamp: float
    ego_pose: Tensor
    views: list[ViewInputs]
    pc_boxes: Tensor
    pc_scores: Tensor
    pc_appearance: Tensor
    pillars: PillarFeatureSet
    gt_boxes: Tensor
    gt_classes: Tensor

    @property
    def n_gt(self) -> int:
        return self.gt_boxes.shape[0]


def _tensor(values: np.ndarray) -> Tensor:
    return torch.from_numpy(np.ascontiguousarray(values)).to(DTYPE)


def _projected_gt(frame: SceneFrame, view: int) -> tuple[Tensor, Tensor, Tensor]:
    rows, depths, indices = [], [], []
    for i, box in enumerate(frame.boxes):
        projected = project_box3d_to_box2d(frame.cameras[view], box)
        depth = box_center_depth(frame, view, box)
        if projected is None or depth <= MIN_DEPTH:
            continue
        rows.append(projected.as_tuple())
        depths.append(depth)
        indices.append(i)
    return (
        torch.tensor(rows, dtype=DTYPE).reshape(-1, 4),
        torch.tensor(depths, dtype=DTYPE),
        torch.tensor(indices, dtype=torch.long),
    )


def prepare_sample(frame: SceneFrame, oracle: OracleConfig,
                   /, *,
                   n_classes: int,
                   cell_size: float,
                   extent: float,
                   seed: int) -> FrameSample:
    """Run every oracle on `frame`; the noise stream is seeded by (seed, frame index)."""
    rng = np.random.default_rng((seed, frame.index))
    codebook = class_codebook(n_classes, oracle)
    views = []
    for view, cam in enumerate(frame.cameras):
        detections = oracle_detect_2d(frame, view, oracle, rng)
        gt_boxes, gt_depths, gt_indices = _projected_gt(frame, view)
        views.append(ViewInputs(
            camera=cam,
            feature_map=torch.empty(0, dtype=DTYPE),
            boxes=_tensor(detections.boxes),
            scores=_tensor(detections.scores),
            gt_boxes=gt_boxes,
            gt_depths=gt_depths,
            gt_indices=gt_indices,
        ))
    detections_3d = oracle_detect_3d(frame, oracle, rng, codebook)
    features = point_features(frame, oracle, rng, codebook)
    pillars = pillarize(frame.points, features, cell_size=cell_size, extent=(extent, extent))
    for view, feature_map in zip(views, synthesize_feature_maps(frame, oracle, n_classes, rng)):
        view.feature_map = feature_map

    return FrameSample(
        index=frame.index,
        timestamp=frame.timestamp,
        ego_pose=_tensor(frame.ego_pose),
        views=views,
        pc_boxes=_tensor(detections_3d.as_array()),
        pc_scores=_tensor(detections_3d.scores),
        pc_appearance=_tensor(detections_3d.appearance),
        pillars=pillars,
        gt_boxes=boxes_tensor(frame.boxes),
        gt_classes=torch.from_numpy(frame.classes.copy()),
    )


def make_clips(samples: Sequence[FrameSample], length: int) -> list[list[FrameSample]]:
    """All runs of `length` consecutive samples; the last sample of a clip is
    the supervised one.
    """
    if length < 1:
        msg = "A clip needs at least one frame."
        hint = f"Instead, {length=} is given."
        raise ConfigurationError(msg + "\n" + hint)
    return [list(samples[i:i + length]) for i in range(len(samples) - length + 1)]

"""Oracle experts standing in for trained detectors and backbones.

They read the ground truth of a `SceneFrame` and emit what real experts would:
noisy 2D boxes per view, noisy 3D boxes with appearance features, per-point
LiDAR features and per-view image feature maps.
"""

from dataclasses import dataclass

import numpy as np
import torch

from fusionq.common_types import DTYPE, FloatArray, IntArray, Tensor
from fusionq.errors import ConfigurationError
from fusionq.geometry import Box2D, Box3D, project_box3d_to_box2d
from fusionq.scenesim import SceneFrame, points_per_box


@dataclass(slots=True, frozen=True)
class OracleConfig:
    box_jitter_px: float = 2.0
    score_noise: float = 0.1
    min_box_px: float = 4.0
    center_jitter_m: float = 0.2
    size_jitter: float = 0.05
    yaw_jitter: float = 0.05
    min_points: int = 5
    fn_rate_2d: float = 0.0
    fn_rate_3d: float = 0.0
    feature_dim: int = 16
    feature_noise: float = 0.1
    codebook_seed: int = 7
    feature_stride: int = 8
    proximity_sigma: float = 1.5

    def __post_init__(self) -> None:
        sigmas = {name: getattr(self, name) for name in (
            "box_jitter_px", "score_noise", "min_box_px", "center_jitter_m",
            "size_jitter", "yaw_jitter", "feature_noise",
        )}
        for name, value in sigmas.items():
            if value < 0:
                msg = f"The oracle setting `{name}` must not be negative."
                hint = f"Instead, {name}={value} is given."
                raise ConfigurationError(msg + "\n" + hint)
        if self.min_points < 1:
            msg = "The minimal number of visible points must be at least 1."
            hint = f"Instead, min_points={self.min_points} is given."
            raise ConfigurationError(msg + "\n" + hint)
        for name in ("fn_rate_2d", "fn_rate_3d"):
            if not 0 <= getattr(self, name) <= 1:
                msg = f"The false-negative rate `{name}` must lie in [0, 1]."
                hint = f"Instead, {name}={getattr(self, name)} is given."
                raise ConfigurationError(msg + "\n" + hint)
        if self.feature_dim < 1 or self.feature_stride < 1 or self.proximity_sigma <= 0:
            msg = "The feature size, stride and proximity width must be positive."
            hint = (f"Instead, feature_dim={self.feature_dim}, feature_stride={self.feature_stride} "
                    f"and proximity_sigma={self.proximity_sigma} are given.")
            raise ConfigurationError(msg + "\n" + hint)


def image_feature_dim(n_classes: int) -> int:
    """Proximity, one class-weighted proximity per class, x/W, y/H and noise."""
    return n_classes + 4


def class_codebook(n_classes: int, oracle: OracleConfig) -> FloatArray:
    """Fixed unit-norm class embeddings shared by all LiDAR features."""
    codes = np.random.default_rng(oracle.codebook_seed).normal(size=(n_classes, oracle.feature_dim))
    return codes / np.linalg.norm(codes, axis=-1, keepdims=True)


def _noisy_scores(noise: FloatArray) -> FloatArray:
    return np.clip(1 - np.abs(noise), 0.0, 1.0)


@dataclass(slots=True, eq=False, match_args=False)
class Detections2D:
    """Rows (x_min, y_min, x_max, y_max), scores and the source GT index."""
    boxes: FloatArray
    scores: FloatArray
    sources: IntArray

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def as_pairs(self) -> list[tuple[Box2D, float]]:
        return [(Box2D(*row), float(score)) for row, score in zip(self.boxes, self.scores)]


@dataclass(slots=True, eq=False, match_args=False)
class Detections3D:
    boxes: list[Box3D]
    scores: FloatArray
    classes: IntArray
    appearance: FloatArray
    sources: IntArray

    def __len__(self) -> int:
        return len(self.boxes)

    def as_array(self) -> FloatArray:
        """N×7 rows (x, y, z, w, l, h, rot)."""
        if not self.boxes:
            return np.zeros((0, 7))
        return np.stack([b.as_array() for b in self.boxes])


def oracle_detect_2d(frame: SceneFrame, view: int, oracle: OracleConfig,
                     rng: np.random.Generator) -> Detections2D:
    """Projected GT boxes of one view with corner jitter, misses and noisy scores.

    The random draws per object do not depend on its visibility, so the
    detections of one object never shift the noise of another.
    """
    cam = frame.cameras[view]
    n = len(frame.boxes)
    misses = rng.uniform(size=n) < oracle.fn_rate_2d
    jitter = rng.normal(size=(n, 4)) * oracle.box_jitter_px
    scores = _noisy_scores(rng.normal(size=n) * oracle.score_noise)

    rows, kept_scores, sources = [], [], []
    for i, box in enumerate(frame.boxes):
        projected = project_box3d_to_box2d(cam, box)
        if projected is None or misses[i]:
            continue
        if projected.width < oracle.min_box_px or projected.height < oracle.min_box_px:
            continue
        x_min, y_min, x_max, y_max = np.asarray(projected.as_tuple()) + jitter[i]
        if x_min >= x_max or y_min >= y_max:
            continue
        detection = Box2D(x_min, y_min, x_max, y_max).clipped(cam.width, cam.height)
        if detection is None:
            continue
        rows.append(detection.as_tuple())
        kept_scores.append(scores[i])
        sources.append(i)
    return Detections2D(
        np.array(rows, dtype=np.float64).reshape(-1, 4),
        np.array(kept_scores, dtype=np.float64),
        np.array(sources, dtype=np.int64),
    )


def oracle_detect_3d(frame: SceneFrame, oracle: OracleConfig, rng: np.random.Generator,
                     codebook: FloatArray) -> Detections3D:
    """GT boxes with at least `min_points` LiDAR returns, jittered, with
    appearance = class embedding + noise.
    """
    n = len(frame.boxes)
    counts = points_per_box(frame)
    misses = rng.uniform(size=n) < oracle.fn_rate_3d
    center_noise = rng.normal(size=(n, 3)) * oracle.center_jitter_m
    size_noise = rng.normal(size=(n, 3)) * oracle.size_jitter
    yaw_noise = rng.normal(size=n) * oracle.yaw_jitter
    scores = _noisy_scores(rng.normal(size=n) * oracle.score_noise)
    feature_noise = rng.normal(size=(n, codebook.shape[1])) * oracle.feature_noise

    keep = [i for i in range(n) if counts[i] >= oracle.min_points and not misses[i]]
    boxes = [
        Box3D(
            center=tuple(np.asarray(frame.boxes[i].center) + center_noise[i]),
            size=tuple(np.asarray(frame.boxes[i].size) * np.exp(size_noise[i])),
            yaw=frame.boxes[i].yaw + yaw_noise[i],
            velocity=frame.boxes[i].velocity,
        )
        for i in keep
    ]
    index = np.array(keep, dtype=np.int64)
    classes = frame.classes[index]
    return Detections3D(
        boxes=boxes,
        scores=scores[index],
        classes=classes,
        appearance=codebook[classes] + feature_noise[index],
        sources=index,
    )


def point_features(frame: SceneFrame, oracle: OracleConfig, rng: np.random.Generator,
                   codebook: FloatArray) -> FloatArray:
    """X×F per-point features: the class embedding of the source box (zero for
    clutter) plus noise.
    """
    labels = frame.point_labels
    features = np.zeros((labels.size, codebook.shape[1]))
    on_box = labels >= 0
    features[on_box] = codebook[frame.classes[labels[on_box]]]
    return features + rng.normal(size=features.shape) * oracle.feature_noise


def synthesize_feature_maps(frame: SceneFrame, oracle: OracleConfig, n_classes: int,
                            rng: np.random.Generator) -> list[Tensor]:
    """Per-view (H/s)×(W/s)×(n_classes + 4) feature fields at stride s.

    Channel 0 is exp(-d²/2σ²) of the distance d (in cells) to the nearest
    projected object box, the next `n_classes` channels restrict it to one
    class, then come the normalized cell coordinates and a noise channel.
    """
    stride = oracle.feature_stride
    maps = []
    for cam in frame.cameras:
        map_h, map_w = max(cam.height // stride, 1), max(cam.width // stride, 1)
        xs = (np.arange(map_w) + 0.5) / map_w * cam.width
        ys = (np.arange(map_h) + 0.5) / map_h * cam.height
        proximity = np.zeros((n_classes, map_h, map_w))
        for cls, box in zip(frame.classes, frame.boxes):
            projected = project_box3d_to_box2d(cam, box)
            if projected is None:
                continue
            dx = np.maximum.reduce([projected.x_min - xs, np.zeros_like(xs), xs - projected.x_max])
            dy = np.maximum.reduce([projected.y_min - ys, np.zeros_like(ys), ys - projected.y_max])
            distance2 = (dy[:, None] ** 2 + dx[None, :] ** 2) / stride ** 2
            field = np.exp(-distance2 / (2 * oracle.proximity_sigma ** 2))
            proximity[cls] = np.maximum(proximity[cls], field)

        grid_x, grid_y = np.meshgrid(xs / cam.width, ys / cam.height)
        noise = rng.normal(size=(map_h, map_w)) * oracle.feature_noise
        channels = [proximity.max(axis=0), *proximity, grid_x, grid_y, noise]
        maps.append(torch.from_numpy(np.stack(channels, axis=-1)).to(DTYPE))
    return maps


def box_center_depth(frame: SceneFrame, view: int, box: Box3D) -> float:
    """Camera-frame depth of the box center in one view."""
    cam = frame.cameras[view]
    center = torch.tensor(box.center, dtype=DTYPE)
    return float((cam.extrinsic[2, :3] @ center + cam.extrinsic[2, 3]).item())

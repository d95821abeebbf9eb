"""Synthetic driving world: moving boxes seen by a camera ring and a LiDAR.

The global frame is fixed at the ego start pose. Every `SceneFrame` stores its
boxes, points and cameras in the ego frame of its own timestamp, which is the
world frame of the model for that frame. Ground is the plane z = 0.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from fusionq.common_types import DTYPE, FloatArray, IntArray
from fusionq.errors import ConfigurationError
from fusionq.geometry import Box3D, CameraModel, wrap_angle


logger = logging.getLogger(__name__)

CLASS_NAMES = ("car", "pedestrian", "cyclist")
# (w, l, h) in meters
CLASS_SIZES = ((1.9, 4.5, 1.6), (0.7, 0.7, 1.8), (0.7, 1.8, 1.5))
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(slots=True, frozen=True)
class CameraRigSpec:
    """A ring of `n_views` identical pinhole cameras looking outwards."""
    n_views: int = 6
    width: int = 384
    height: int = 224
    fov_deg: float = 80.0
    mount_height: float = 1.6
    mount_radius: float = 0.5

    def __post_init__(self) -> None:
        if self.n_views < 1 or self.width < 1 or self.height < 1:
            msg = "A camera rig needs at least one view with a positive image size."
            hint = f"Instead, n_views={self.n_views}, width={self.width} and height={self.height} are given."
            raise ConfigurationError(msg + "\n" + hint)
        if not 0 < self.fov_deg < 180:
            msg = "The field of view must lie in (0, 180) degrees."
            hint = f"Instead, fov_deg={self.fov_deg} is given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class LidarSpec:
    """Returns per steradian of visible face, range, dropout and ground clutter."""
    points_per_sr: float = 2000.0
    max_range: float = 60.0
    dropout: float = 0.1
    clutter_count: int = 200
    mount_height: float = 1.8

    def __post_init__(self) -> None:
        if self.points_per_sr < 0 or self.max_range <= 0 or self.clutter_count < 0:
            msg = "LiDAR density and clutter must not be negative and the range must be positive."
            hint = (f"Instead, points_per_sr={self.points_per_sr}, max_range={self.max_range} "
                    f"and clutter_count={self.clutter_count} are given.")
            raise ConfigurationError(msg + "\n" + hint)
        if not 0 <= self.dropout < 1:
            msg = "The dropout rate must lie in [0, 1)."
            hint = f"Instead, dropout={self.dropout} is given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class SceneConfig:
    n_objects: tuple[int, int] = (8, 12)
    n_classes: int = 3
    extent: float = 54.4
    speed_range: tuple[float, float] = (0.0, 8.0)
    min_distance: float = 4.0
    ego_speed: float = 5.0
    ego_yaw_rate: float = 0.0
    n_frames: int = 10
    frame_period: float = 0.5
    seed: int = 0
    rig: CameraRigSpec = field(default_factory=CameraRigSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)

    def __post_init__(self) -> None:
        low, high = self.n_objects
        if not 0 <= low <= high:
            msg = "The object count range must satisfy 0 <= low <= high."
            hint = f"Instead, n_objects={self.n_objects} is given."
            raise ConfigurationError(msg + "\n" + hint)
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            msg = f"The class count must lie in [1, {len(CLASS_NAMES)}]."
            hint = f"Instead, n_classes={self.n_classes} is given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.extent <= 0 or self.frame_period <= 0 or self.n_frames < 0:
            msg = "The extent and the frame period must be positive."
            hint = f"Instead, extent={self.extent}, frame_period={self.frame_period} and n_frames={self.n_frames} are given."
            raise ConfigurationError(msg + "\n" + hint)
        if not 0 <= self.speed_range[0] <= self.speed_range[1]:
            msg = "The speed range must satisfy 0 <= low <= high."
            hint = f"Instead, speed_range={self.speed_range} is given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.min_distance >= self.extent:
            msg = "The minimal object distance must be below the extent."
            hint = f"Instead, min_distance={self.min_distance} and extent={self.extent} are given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, eq=False, match_args=False)
class SceneFrame:
    """One timestamped frame in its own ego frame.

    `ego_pose` maps this ego frame into the global frame. `point_labels` names
    the box each LiDAR point was sampled from, -1 for ground clutter.
    """
    index: int
    timestamp: float
    ego_pose: FloatArray
    boxes: list[Box3D]
    classes: IntArray
    points: FloatArray
    point_labels: IntArray
    cameras: list[CameraModel]


def camera_facing(heading: float, spec: CameraRigSpec) -> CameraModel:
    """Camera mounted on the rig circle, optical axis along `heading` (radians, ego frame)."""
    focal = spec.width / (2 * math.tan(math.radians(spec.fov_deg) / 2))
    intrinsic = np.eye(4)
    intrinsic[0, 0] = intrinsic[1, 1] = focal
    intrinsic[0, 2] = spec.width / 2
    intrinsic[1, 2] = spec.height / 2

    cos, sin = math.cos(heading), math.sin(heading)
    # rows: image right, image down, optical axis
    rotation = np.array([[sin, -cos, 0.0], [0.0, 0.0, -1.0], [cos, sin, 0.0]])
    center = np.array([spec.mount_radius * cos, spec.mount_radius * sin, spec.mount_height])
    extrinsic = np.eye(4)
    extrinsic[:3, :3] = rotation
    extrinsic[:3, 3] = -rotation @ center
    return CameraModel(torch.from_numpy(intrinsic), torch.from_numpy(extrinsic), spec.width, spec.height)


def default_rig(spec: CameraRigSpec | None = None) -> list[CameraModel]:
    spec = spec or CameraRigSpec()
    return [camera_facing(2 * math.pi * i / spec.n_views, spec) for i in range(spec.n_views)]


def ego_pose_at(t: float, speed: float, yaw_rate: float) -> FloatArray:
    """Ego→global pose after driving `t` seconds on a constant-curvature path."""
    yaw = yaw_rate * t
    if yaw_rate == 0:
        x, y = speed * t, 0.0
    else:
        radius = speed / yaw_rate
        x, y = radius * math.sin(yaw), radius * (1 - math.cos(yaw))
    pose = np.eye(4)
    pose[:2, :2] = [[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]]
    pose[:2, 3] = x, y
    return pose


@dataclass(slots=True, frozen=True)
class _Track:
    cls: int
    size: tuple[float, float, float]
    start: FloatArray
    velocity: FloatArray
    yaw: float


def _place_track(cfg: SceneConfig, poses: list[FloatArray], times: FloatArray,
                 rng: np.random.Generator) -> _Track:
    """Draw a constant-velocity track that stays inside the extent in every frame."""
    limit = 0.9 * cfg.extent
    inverses = [np.linalg.inv(p) for p in poses]
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        cls = int(rng.integers(cfg.n_classes))
        size = tuple(s * rng.uniform(0.9, 1.1) for s in CLASS_SIZES[cls])
        start = rng.uniform(-limit, limit, size=2)
        yaw = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(*cfg.speed_range)
        velocity = speed * np.array([math.cos(yaw), math.sin(yaw)])
        centers = start + times[:, None] * velocity
        local = np.stack([
            (inv[:2, :2] @ c + inv[:2, 3]) for inv, c in zip(inverses, centers)
        ]) if len(poses) else np.zeros((0, 2))
        inside = np.all(np.abs(local) <= limit)
        clear = np.all(np.hypot(local[:, 0], local[:, 1]) >= cfg.min_distance)
        if inside and clear:
            return _Track(cls, size, start, velocity, yaw)
    msg = "Cannot place an object that stays inside the scene extent."
    hint = f"Instead, extent={cfg.extent} with ego_speed={cfg.ego_speed} over {cfg.n_frames} frames is given."
    raise ConfigurationError(msg + "\n" + hint)


def generate_sequence(cfg: SceneConfig) -> list[SceneFrame]:
    """Deterministic sequence of `cfg.n_frames` frames.

    The layout and every frame draw from their own child of
    `SeedSequence(cfg.seed)`, so frames can be produced independently.
    """
    layout_seed, *frame_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_frames + 1)
    rng = np.random.default_rng(layout_seed)
    times = np.arange(cfg.n_frames) * cfg.frame_period
    poses = [ego_pose_at(t, cfg.ego_speed, cfg.ego_yaw_rate) for t in times]
    n_objects = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    tracks = [_place_track(cfg, poses, times, rng) for _ in range(n_objects)]
    cameras = default_rig(cfg.rig)
    logger.debug("Generating %d frames with %d objects (seed %d)", cfg.n_frames, n_objects, cfg.seed)

    frames = []
    for index, (t, pose, frame_seed) in enumerate(zip(times, poses, frame_seeds)):
        inverse = np.linalg.inv(pose)
        ego_yaw = math.atan2(pose[1, 0], pose[0, 0])
        boxes = []
        for track in tracks:
            center = track.start + t * track.velocity
            local = inverse[:2, :2] @ center + inverse[:2, 3]
            velocity = inverse[:2, :2] @ track.velocity
            boxes.append(Box3D(
                center=(local[0], local[1], track.size[2] / 2),
                size=track.size,
                yaw=wrap_angle(track.yaw - ego_yaw),
                velocity=(velocity[0], velocity[1]),
            ))
        points, labels = simulate_lidar(boxes, cfg.lidar, np.random.default_rng(frame_seed))
        frames.append(SceneFrame(
            index=index,
            timestamp=float(t),
            ego_pose=pose,
            boxes=boxes,
            classes=np.array([track.cls for track in tracks], dtype=np.int64),
            points=points,
            point_labels=labels,
            cameras=cameras,
        ))
    return frames


def box_faces(box: Box3D) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Centers, outward normals and the two half-edge vectors of the 6 faces."""
    w, l, h = box.size
    cos, sin = math.cos(box.yaw), math.sin(box.yaw)
    ax_l = np.array([cos, sin, 0.0])
    ax_w = np.array([-sin, cos, 0.0])
    ax_h = np.array([0.0, 0.0, 1.0])
    halves = {"l": ax_l * l / 2, "w": ax_w * w / 2, "h": ax_h * h / 2}
    center = np.asarray(box.center)
    centers, normals, edges_a, edges_b = [], [], [], []
    for normal_axis, (a, b) in (("l", ("w", "h")), ("w", ("l", "h")), ("h", ("l", "w"))):
        for sign in (1.0, -1.0):
            offset = sign * halves[normal_axis]
            centers.append(center + offset)
            normals.append(offset / np.linalg.norm(offset))
            edges_a.append(halves[a])
            edges_b.append(halves[b])
    return np.array(centers), np.array(normals), np.array(edges_a), np.array(edges_b)


def simulate_lidar(boxes: list[Box3D], spec: LidarSpec,
                   rng: np.random.Generator) -> tuple[FloatArray, IntArray]:
    """Sample points on the visible faces of `boxes` plus ground clutter.

    A face receives Poisson(density · area · cos(incidence) / r²) points, which
    is its solid angle seen from the sensor. Points beyond the range are cut,
    then every point survives dropout independently.
    """
    sensor = np.array([0.0, 0.0, spec.mount_height])
    chunks, labels = [], []
    for index, box in enumerate(boxes):
        centers, normals, edges_a, edges_b = box_faces(box)
        to_sensor = sensor - centers
        distance = np.linalg.norm(to_sensor, axis=-1)
        cosine = np.einsum("ij,ij->i", normals, to_sensor) / distance
        area = 4 * np.linalg.norm(edges_a, axis=-1) * np.linalg.norm(edges_b, axis=-1)
        expected = np.where(cosine > 0, spec.points_per_sr * area * cosine / distance ** 2, 0.0)
        counts = rng.poisson(expected)
        for face, count in enumerate(counts):
            if count == 0:
                continue
            a, b = rng.uniform(-1, 1, size=(2, count, 1))
            chunks.append(centers[face] + a * edges_a[face] + b * edges_b[face])
            labels.append(np.full(count, index, dtype=np.int64))

    radius = spec.max_range * np.sqrt(rng.uniform(size=spec.clutter_count))
    angle = rng.uniform(-math.pi, math.pi, size=spec.clutter_count)
    chunks.append(np.stack((radius * np.cos(angle), radius * np.sin(angle), np.zeros_like(radius)), axis=-1))
    labels.append(np.full(spec.clutter_count, -1, dtype=np.int64))

    points = np.concatenate(chunks)
    point_labels = np.concatenate(labels)
    keep = np.linalg.norm(points - sensor, axis=-1) <= spec.max_range
    keep &= rng.uniform(size=points.shape[0]) >= spec.dropout
    return points[keep], point_labels[keep]


def points_per_box(frame: SceneFrame) -> IntArray:
    labels = frame.point_labels[frame.point_labels >= 0]
    return np.bincount(labels, minlength=len(frame.boxes))


def boxes_as_array(boxes: list[Box3D]) -> FloatArray:
    """N×9 rows (x, y, z, w, l, h, rot, vx, vy); a missing velocity is zero."""
    if not boxes:
        return np.zeros((0, 9))
    return np.array([[*b.as_array(), *(b.velocity or (0.0, 0.0))] for b in boxes], dtype=np.float64)


def boxes_tensor(boxes: list[Box3D]) -> torch.Tensor:
    return torch.from_numpy(boxes_as_array(boxes)).to(DTYPE)

"""Pinhole cameras, boxes and the projections between world, camera and pixels.

Conventions: the world frame is the ego frame at the current timestamp; the
camera frame has x to the right, y down and z along the optical axis; pixel
(u, v) = (0, 0) is the top-left corner of the image, so the center of the pixel
with indices (i, j) is at (j + 0.5, i + 0.5).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.ops import box_iou

from fusionq.common_types import DTYPE, FloatArray, Tensor
from fusionq.errors import DomainError
from fusionq.numerics import as_tensor


MIN_DEPTH = 1e-6
ORTHONORMAL_TOLERANCE = 1e-9


@dataclass(slots=True, frozen=True, eq=False)
class CameraModel:
    """One pinhole view: 4×4 intrinsic `K^ori`, 4×4 world→camera rigid
    `extrinsic` and the image size in pixels.
    """
    intrinsic: Tensor
    extrinsic: Tensor
    width: int
    height: int
    _camera_to_world: Tensor = field(init=False, repr=False)

    def __post_init__(self) -> None:
        intrinsic = as_tensor(self.intrinsic).reshape(4, 4)
        extrinsic = as_tensor(self.extrinsic).reshape(4, 4)
        if intrinsic[0, 0] <= 0 or intrinsic[1, 1] <= 0:
            msg = "Focal lengths must be positive."
            hint = f"Instead, fx={intrinsic[0, 0].item()} and fy={intrinsic[1, 1].item()} are given."
            raise DomainError(msg + "\n" + hint)
        if self.width <= 0 or self.height <= 0:
            msg = "The image size must be positive."
            hint = f"Instead, width={self.width} and height={self.height} are given."
            raise DomainError(msg + "\n" + hint)
        rotation = extrinsic[:3, :3]
        drift = (rotation @ rotation.T - torch.eye(3, dtype=DTYPE)).abs().max().item()
        if drift > ORTHONORMAL_TOLERANCE:
            msg = "The extrinsic rotation block must be orthonormal."
            hint = f"Instead, |R·Rᵀ - I| reaches {drift:.3e}."
            raise DomainError(msg + "\n" + hint)

        inverse = torch.eye(4, dtype=DTYPE)
        inverse[:3, :3] = rotation.T
        inverse[:3, 3] = -rotation.T @ extrinsic[:3, 3]
        object.__setattr__(self, "intrinsic", intrinsic)
        object.__setattr__(self, "extrinsic", extrinsic)
        object.__setattr__(self, "_camera_to_world", inverse)

    @property
    def fx(self) -> float:
        return self.intrinsic[0, 0].item()

    @property
    def fy(self) -> float:
        return self.intrinsic[1, 1].item()

    @property
    def ox(self) -> float:
        return self.intrinsic[0, 2].item()

    @property
    def oy(self) -> float:
        return self.intrinsic[1, 2].item()

    @property
    def camera_to_world(self) -> Tensor:
        return self._camera_to_world

    @property
    def center(self) -> Tensor:
        """Camera center in the world frame."""
        return self._camera_to_world[:3, 3]


@dataclass(slots=True, frozen=True)
class Box2D:
    """Axis-aligned image box in pixels."""
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            msg = "A 2D box must satisfy x_min < x_max and y_min < y_max."
            hint = f"Instead, {self.as_tuple()} is given."
            raise DomainError(msg + "\n" + hint)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def scaled(self, factor: float) -> "Box2D":
        return Box2D(*(c * factor for c in self.as_tuple()))

    def clipped(self, width: float, height: float) -> "Box2D | None":
        """Intersection with the image [0, width]×[0, height], or `None` if empty."""
        x_min, x_max = max(self.x_min, 0.0), min(self.x_max, width)
        y_min, y_max = max(self.y_min, 0.0), min(self.y_max, height)
        if x_min >= x_max or y_min >= y_max:
            return None
        return Box2D(x_min, y_min, x_max, y_max)


def wrap_angle(angle: float) -> float:
    """Wrap `angle` into (-π, π]."""
    return angle - 2 * math.pi * math.ceil((angle - math.pi) / (2 * math.pi))


@dataclass(slots=True, frozen=True)
class Box3D:
    """Upright 3D box: center (x, y, z), size (w, l, h) with the length along the
    heading, yaw in (-π, π] and an optional BEV velocity (vx, vy).
    """
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if any(s <= 0 for s in self.size):
            msg = "Box sizes must be positive."
            hint = f"Instead, size={self.size} is given."
            raise DomainError(msg + "\n" + hint)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))

    def as_array(self) -> FloatArray:
        """The 7 scalars (x, y, z, w, l, h, rot)."""
        return np.array([*self.center, *self.size, self.yaw], dtype=np.float64)


def box3d_corners(box: Box3D) -> FloatArray:
    """The 8 corners of `box` in its parent frame, bottom face first."""
    w, l, h = box.size
    xs = np.array([1, 1, -1, -1, 1, 1, -1, -1], dtype=np.float64) * (l / 2)
    ys = np.array([1, -1, -1, 1, 1, -1, -1, 1], dtype=np.float64) * (w / 2)
    zs = np.array([-1, -1, -1, -1, 1, 1, 1, 1], dtype=np.float64) * (h / 2)
    cos, sin = math.cos(box.yaw), math.sin(box.yaw)
    corners = np.stack((cos * xs - sin * ys, sin * xs + cos * ys, zs), axis=-1)
    return corners + np.asarray(box.center, dtype=np.float64)


@dataclass(slots=True)
class Projection:
    """Pixels (..., 2), camera-frame depth (...) and the in-front mask (...)."""
    pixels: Tensor
    depth: Tensor
    valid: Tensor


def apply_intrinsic(intrinsic: Tensor, camera_points: Tensor) -> Tensor:
    """Perspective projection of camera-frame points with a 4×4 intrinsic;
    depths are clamped at `MIN_DEPTH`.
    """
    depth = camera_points[..., 2].clamp(min=MIN_DEPTH)
    homogeneous = camera_points @ intrinsic[:3, :3].T
    return homogeneous[..., :2] / depth.unsqueeze(-1)


def project_world_to_pixel(cam: CameraModel, points: Tensor) -> Projection:
    """Project world points (..., 3) into `cam`.

    Points at depth <= `MIN_DEPTH` are flagged invalid; their pixels are finite
    but meaningless.
    """
    rotation = cam.extrinsic[:3, :3]
    translation = cam.extrinsic[:3, 3]
    camera_points = points @ rotation.T + translation
    depth = camera_points[..., 2]
    return Projection(apply_intrinsic(cam.intrinsic, camera_points), depth, depth > MIN_DEPTH)


def unproject_pixel_at_depth(cam: CameraModel, pixels: Tensor, depth: Tensor | float) -> Tensor:
    """World points (..., 3) that project to `pixels` (..., 2) at camera-frame `depth`."""
    depth = torch.as_tensor(depth, dtype=DTYPE)
    if bool((depth <= 0).any()):
        msg = "Unprojection needs positive depths."
        hint = f"Instead, min depth={depth.min().item()} is given."
        raise DomainError(msg + "\n" + hint)
    x = (pixels[..., 0] - cam.ox) * depth / cam.fx
    y = (pixels[..., 1] - cam.oy) * depth / cam.fy
    camera_points = torch.stack((x, y, depth.expand_as(x)), dim=-1)
    rotation = cam.extrinsic[:3, :3]
    translation = cam.extrinsic[:3, 3]
    return (camera_points - translation) @ rotation


def _check_roi_size(roi_size: tuple[int, int]) -> None:
    if roi_size[0] <= 0 or roi_size[1] <= 0:
        msg = "The RoI size must be positive."
        hint = f"Instead, {roi_size=} is given."
        raise DomainError(msg + "\n" + hint)


def equivalent_intrinsics_many(cam: CameraModel, boxes: Tensor, roi_size: tuple[int, int]) -> Tensor:
    """N×4×4 equivalent intrinsics of boxes given as rows (x_min, y_min, x_max, y_max)."""
    _check_roi_size(roi_size)
    x_min, y_min, x_max, y_max = boxes.unbind(-1)
    if bool(((x_max <= x_min) | (y_max <= y_min)).any()):
        raise DomainError("Degenerate boxes have no equivalent intrinsics.")
    r_x = roi_size[0] / (x_max - x_min)
    r_y = roi_size[1] / (y_max - y_min)
    matrices = torch.eye(4, dtype=DTYPE).repeat(boxes.shape[0], 1, 1)
    matrices[:, 0, 0] = cam.fx * r_x
    matrices[:, 1, 1] = cam.fy * r_y
    matrices[:, 0, 2] = (cam.ox - x_min) * r_x
    matrices[:, 1, 2] = (cam.oy - y_min) * r_y
    return matrices


def equivalent_intrinsics(cam: CameraModel, box: Box2D, roi_size: tuple[int, int]) -> Tensor:
    """Intrinsic matrix that maps camera points straight into the RoI grid of
    size (W^r, H^r) cut out of `box`.
    """
    boxes = torch.tensor([box.as_tuple()], dtype=DTYPE)
    return equivalent_intrinsics_many(cam, boxes, roi_size)[0]


def bilinear_sample(feature_map: Tensor, xs: Tensor, ys: Tensor) -> Tensor:
    """Bilinear samples of an H×W×C map at continuous pixel coordinates.

    Coordinates outside the map are clamped to the border. `xs` and `ys` share a
    shape (...); the result has shape (..., C).
    """
    height, width, channels = feature_map.shape
    grid = torch.stack((2 * xs / width - 1, 2 * ys / height - 1), dim=-1)
    sampled = F.grid_sample(
        feature_map.permute(2, 0, 1).unsqueeze(0),
        grid.reshape(1, 1, -1, 2),
        mode="bilinear",
        padding_mode="border",
        align_corners=False,
    )
    return sampled[0, :, 0, :].T.reshape(*xs.shape, channels)


def roi_align_many(feature_map: Tensor, boxes: Tensor, roi_size: tuple[int, int]) -> Tensor:
    """N×H^r×W^r×C RoI features of boxes given as rows in the pixel units of
    `feature_map`: one bilinear sample at the center of every output cell.
    """
    _check_roi_size(roi_size)
    height, width, _ = feature_map.shape
    x_min, y_min, x_max, y_max = (c[:, None, None] for c in boxes.reshape(-1, 4).unbind(-1))
    outside = (x_max <= 0) | (y_max <= 0) | (x_min >= width) | (y_min >= height)
    if bool(outside.any()):
        msg = "Every RoI must intersect the feature map."
        hint = f"Instead, {int(outside.sum())} boxes outside a {height}×{width} map are given."
        raise DomainError(msg + "\n" + hint)
    roi_w, roi_h = roi_size
    steps_x = ((torch.arange(roi_w, dtype=DTYPE) + 0.5) / roi_w)[None, None, :]
    steps_y = ((torch.arange(roi_h, dtype=DTYPE) + 0.5) / roi_h)[None, :, None]
    xs = (x_min + steps_x * (x_max - x_min)).expand(-1, roi_h, roi_w)
    ys = (y_min + steps_y * (y_max - y_min)).expand(-1, roi_h, roi_w)
    return bilinear_sample(feature_map, xs, ys)


def roi_align(feature_map: Tensor, box: Box2D, roi_size: tuple[int, int]) -> Tensor:
    """H^r×W^r×C RoI features: one bilinear sample at the center of every output cell.

    `box` is given in the pixel units of `feature_map`.
    """
    boxes = torch.tensor([box.as_tuple()], dtype=DTYPE)
    return roi_align_many(feature_map, boxes, roi_size)[0]


def pairwise_iou(a: Tensor, b: Tensor) -> Tensor:
    """N×G IoU matrix of boxes given as rows (x_min, y_min, x_max, y_max)."""
    return box_iou(a.reshape(-1, 4), b.reshape(-1, 4))


def iou_2d(a: Box2D, b: Box2D) -> float:
    return pairwise_iou(
        torch.tensor([a.as_tuple()], dtype=DTYPE), torch.tensor([b.as_tuple()], dtype=DTYPE)
    ).item()


def project_box3d_to_box2d(cam: CameraModel, box: Box3D) -> Box2D | None:
    """Axis-aligned hull of the projected in-front corners, clipped to the image.

    Corners at depth <= `MIN_DEPTH` are dropped. Return `None` if no corner is in
    front of the camera or the clipped hull is empty.
    """
    projection = project_world_to_pixel(cam, torch.from_numpy(box3d_corners(box)))
    pixels = projection.pixels[projection.valid]
    if pixels.shape[0] == 0:
        return None
    x_min, y_min = pixels.min(dim=0).values.tolist()
    x_max, y_max = pixels.max(dim=0).values.tolist()
    if not (x_min < x_max and y_min < y_max):
        return None
    return Box2D(x_min, y_min, x_max, y_max).clipped(cam.width, cam.height)

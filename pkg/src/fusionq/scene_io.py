"""JSON Lines scene files.

The first line is the header {"format": "fusionq-scene", "version": 1}; every
further line is one frame. Floats are written with their shortest round-trip
representation, so a load after a save gives the same values bit for bit.
"""

import json
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import numpy as np
import torch

from fusionq.common_types import DTYPE
from fusionq.errors import FusionQError, SceneParseError
from fusionq.geometry import Box3D, CameraModel
from fusionq.scenesim import SceneFrame


SCENE_FORMAT = "fusionq-scene"
SCENE_VERSION = 1


def _flat(matrix: Any) -> list[float]:
    return [float(v) for v in np.asarray(matrix, dtype=np.float64).reshape(-1)]


def frame_to_record(frame: SceneFrame) -> dict[str, Any]:
    return {
        "frame_index": frame.index,
        "timestamp": frame.timestamp,
        "ego_pose": _flat(frame.ego_pose),
        "cameras": [
            {"K": _flat(cam.intrinsic), "extrinsic": _flat(cam.extrinsic), "width": cam.width, "height": cam.height}
            for cam in frame.cameras
        ],
        "gts": [
            {
                "class": int(cls),
                "center": list(box.center),
                "size": list(box.size),
                "yaw": box.yaw,
                "velocity": list(box.velocity or (0.0, 0.0)),
            }
            for cls, box in zip(frame.classes, frame.boxes)
        ],
        "points": frame.points.tolist(),
        "point_labels": frame.point_labels.tolist(),
    }


def record_to_frame(record: dict[str, Any]) -> SceneFrame:
    cameras = [
        CameraModel(
            torch.tensor(cam["K"], dtype=DTYPE).reshape(4, 4),
            torch.tensor(cam["extrinsic"], dtype=DTYPE).reshape(4, 4),
            int(cam["width"]),
            int(cam["height"]),
        )
        for cam in record["cameras"]
    ]
    gts = record["gts"]
    boxes = [Box3D(tuple(gt["center"]), tuple(gt["size"]), gt["yaw"], tuple(gt["velocity"])) for gt in gts]
    points = np.asarray(record["points"], dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(record.get("point_labels", [-1] * points.shape[0]), dtype=np.int64)
    if labels.shape != (points.shape[0],):
        raise ValueError("every point needs exactly one label")
    return SceneFrame(
        index=int(record["frame_index"]),
        timestamp=float(record["timestamp"]),
        ego_pose=np.asarray(record["ego_pose"], dtype=np.float64).reshape(4, 4),
        boxes=boxes,
        classes=np.array([int(gt["class"]) for gt in gts], dtype=np.int64),
        points=points,
        point_labels=labels,
        cameras=cameras,
    )


def serialize_sequence(frames: Iterable[SceneFrame], path: Path | str) -> None:
    header = {"format": SCENE_FORMAT, "version": SCENE_VERSION}
    with open(path, "w", encoding="utf-8") as stream:
        stream.write(json.dumps(header) + "\n")
        for frame in frames:
            stream.write(json.dumps(frame_to_record(frame), allow_nan=False) + "\n")


def load_sequence(path: Path | str) -> list[SceneFrame]:
    """Read a scene file written by `serialize_sequence`.

    A completely empty file is an empty sequence. Any malformed line raises
    `SceneParseError` naming that line.
    """
    with open(path, encoding="utf-8") as stream:
        lines = stream.read().splitlines()
    if not lines:
        return []

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise SceneParseError(f"the header is not JSON ({e.msg})", line_number=1) from e
    if not isinstance(header, dict) or header.get("format") != SCENE_FORMAT:
        raise SceneParseError(f"the header must declare format {SCENE_FORMAT!r}", line_number=1)
    if header.get("version") != SCENE_VERSION:
        raise SceneParseError(
            f"unsupported version {header.get('version')!r}, expected {SCENE_VERSION}", line_number=1
        )

    frames = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            frames.append(record_to_frame(json.loads(line)))
        except json.JSONDecodeError as e:
            raise SceneParseError(f"invalid JSON ({e.msg})", line_number=line_number) from e
        except KeyError as e:
            raise SceneParseError(f"missing field {e.args[0]!r}", line_number=line_number) from e
        except (TypeError, ValueError, RuntimeError, FusionQError) as e:
            raise SceneParseError(f"malformed frame ({e})", line_number=line_number) from e
    return frames

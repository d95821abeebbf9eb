import json

import numpy as np
import pytest

from fusionq.errors import SceneParseError
from fusionq.scene_io import load_sequence, serialize_sequence
from fusionq.scenesim import SceneConfig, generate_sequence

IDENTITY = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
HEADER = '{"format": "fusionq-scene", "version": 1}\n'


def test_saved_sequence_loads_back(tmp_path):
    frames = generate_sequence(SceneConfig(n_objects=(3, 3), n_frames=2, seed=4))
    path = tmp_path / "scene.jsonl"
    serialize_sequence(frames, path)
    loaded = load_sequence(path)
    assert len(loaded) == 2
    for a, b in zip(frames, loaded):
        assert a.index == b.index and a.timestamp == b.timestamp
        assert a.boxes == b.boxes
        assert np.array_equal(a.classes, b.classes)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.point_labels, b.point_labels)
        assert np.array_equal(a.ego_pose, b.ego_pose)
        assert all(
            (ca.intrinsic == cb.intrinsic).all() and (ca.extrinsic == cb.extrinsic).all()
            for ca, cb in zip(a.cameras, b.cameras)
        )


def test_empty_sequence(tmp_path):
    path = tmp_path / "empty.jsonl"
    serialize_sequence([], path)
    assert load_sequence(path) == []
    path.write_text("")
    assert load_sequence(path) == []


def test_hand_written_frame(tmp_path):
    record = {
        "frame_index": 3,
        "timestamp": 1.5,
        "ego_pose": IDENTITY,
        "cameras": [{"K": [100.0, 0, 50, 0, 0, 100, 40, 0, 0, 0, 1, 0, 0, 0, 0, 1],
                     "extrinsic": IDENTITY, "width": 100, "height": 80}],
        "gts": [{"class": 1, "center": [0.0, 0.0, 10.0], "size": [0.7, 0.7, 1.8], "yaw": 0.5,
                 "velocity": [1.0, -1.0]}],
        "points": [[0.0, 0.1, 9.5], [1.0, 2.0, 0.0]],
        "point_labels": [0, -1],
    }
    path = tmp_path / "hand.jsonl"
    path.write_text(HEADER + json.dumps(record) + "\n")
    (frame,) = load_sequence(path)
    assert frame.index == 3
    assert frame.timestamp == 1.5
    assert frame.classes.tolist() == [1]
    assert frame.boxes[0].center == (0.0, 0.0, 10.0)
    assert frame.boxes[0].yaw == 0.5
    assert frame.boxes[0].velocity == (1.0, -1.0)
    assert frame.points.shape == (2, 3)
    assert frame.point_labels.tolist() == [0, -1]
    assert frame.cameras[0].fx == 100.0
    assert frame.cameras[0].oy == 40.0


@pytest.mark.parametrize(
    ("content", "line_number"),
    [
        ('{"format": "other", "version": 1}\n', 1),
        ('{"format": "fusionq-scene", "version": 2}\n', 1),
        ("not json\n", 1),
        (HEADER + "{broken\n", 2),
        (HEADER + '{"frame_index": 0}\n', 2),
    ],
)
def test_malformed_lines(tmp_path, content, line_number):
    path = tmp_path / "bad.jsonl"
    path.write_text(content)
    with pytest.raises(SceneParseError, match=f"^line {line_number}: ") as info:
        load_sequence(path)
    assert info.value.line_number == line_number


def test_bad_frame_after_good_one(tmp_path):
    frames = generate_sequence(SceneConfig(n_objects=(1, 1), n_frames=1, seed=0))
    path = tmp_path / "scene.jsonl"
    serialize_sequence(frames, path)
    with open(path, "a", encoding="utf-8") as stream:
        stream.write('{"frame_index": 1, "timestamp": 0.5, "ego_pose": [1, 2]}\n')
    with pytest.raises(SceneParseError) as info:
        load_sequence(path)
    assert info.value.line_number == 3

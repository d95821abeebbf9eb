import numpy as np
import pytest
import torch

from fusionq.errors import ConfigurationError
from fusionq.geometry import Box3D, iou_2d, project_box3d_to_box2d
from fusionq.oracles import (
    OracleConfig,
    box_center_depth,
    class_codebook,
    image_feature_dim,
    oracle_detect_2d,
    oracle_detect_3d,
    point_features,
    synthesize_feature_maps,
)
from fusionq.scenesim import CameraRigSpec, LidarSpec, SceneFrame, default_rig, simulate_lidar

EXACT = OracleConfig(box_jitter_px=0.0, score_noise=0.0, center_jitter_m=0.0, size_jitter=0.0,
                     yaw_jitter=0.0, feature_noise=0.0, min_points=1)


def make_frame(boxes, classes, lidar=None, seed=0):
    points, labels = simulate_lidar(boxes, lidar or LidarSpec(clutter_count=50), np.random.default_rng(seed))
    return SceneFrame(
        index=0,
        timestamp=0.0,
        ego_pose=np.eye(4),
        boxes=boxes,
        classes=np.array(classes, dtype=np.int64),
        points=points,
        point_labels=labels,
        cameras=default_rig(CameraRigSpec()),
    )


@pytest.fixture(scope="module")
def frame():
    return make_frame([
        Box3D((12.0, 1.0, 0.8), (1.9, 4.5, 1.6), 0.3),
        Box3D((8.0, -2.0, 0.9), (0.7, 0.7, 1.8), 0.0),
        Box3D((-15.0, 3.0, 0.75), (0.7, 1.8, 1.5), 1.0),
    ], [0, 1, 2])


def test_exact_2d_detections(frame):
    detections = oracle_detect_2d(frame, 0, EXACT, np.random.default_rng(0))
    assert detections.sources.tolist() == [0, 1]
    assert detections.scores.tolist() == [1.0, 1.0]
    for (box, _), source in zip(detections.as_pairs(), detections.sources):
        expected = project_box3d_to_box2d(frame.cameras[0], frame.boxes[source])
        assert iou_2d(box, expected) == pytest.approx(1.0)


def test_2d_detections_stay_in_image(frame):
    noisy = OracleConfig(box_jitter_px=30.0)
    for view in range(len(frame.cameras)):
        detections = oracle_detect_2d(frame, view, noisy, np.random.default_rng(view))
        cam = frame.cameras[view]
        assert np.all(detections.boxes[:, :2] >= 0)
        assert np.all(detections.boxes[:, 2] <= cam.width)
        assert np.all(detections.boxes[:, 3] <= cam.height)
        assert np.all((detections.scores >= 0) & (detections.scores <= 1))


def test_2d_jitter_statistics():
    box = Box3D((12.0, 0.0, 0.8), (1.9, 4.5, 1.6), 0.0)
    frame = make_frame([box], [0])
    expected = np.asarray(project_box3d_to_box2d(frame.cameras[0], box).as_tuple())
    sigma = 2.0
    rng = np.random.default_rng(5)
    oracle = OracleConfig(box_jitter_px=sigma)
    displacement = np.concatenate([
        np.abs(oracle_detect_2d(frame, 0, oracle, rng).boxes[0] - expected) for _ in range(1000)
    ])
    assert displacement.mean() == pytest.approx(sigma * np.sqrt(2 / np.pi), rel=0.05)


def test_2d_false_negatives(frame):
    detections = oracle_detect_2d(frame, 0, OracleConfig(fn_rate_2d=1.0), np.random.default_rng(0))
    assert len(detections) == 0


def test_exact_3d_detections(frame):
    codebook = class_codebook(3, EXACT)
    detections = oracle_detect_3d(frame, EXACT, np.random.default_rng(0), codebook)
    assert detections.sources.tolist() == [0, 1, 2]
    assert detections.boxes == frame.boxes
    assert np.allclose(detections.appearance, codebook[[0, 1, 2]])
    assert detections.as_array().shape == (3, 7)


def test_3d_detections_need_points():
    far = Box3D((100.0, 0.0, 0.8), (1.9, 4.5, 1.6), 0.0)
    near = Box3D((10.0, 0.0, 0.8), (1.9, 4.5, 1.6), 0.0)
    frame = make_frame([far, near], [0, 0])
    detections = oracle_detect_3d(frame, EXACT, np.random.default_rng(0), class_codebook(3, EXACT))
    assert detections.sources.tolist() == [1]


def test_codebook_and_point_features(frame):
    codebook = class_codebook(3, EXACT)
    assert np.allclose(np.linalg.norm(codebook, axis=-1), 1.0)
    assert np.array_equal(codebook, class_codebook(3, EXACT))
    features = point_features(frame, EXACT, np.random.default_rng(0), codebook)
    assert features.shape == (len(frame.points), EXACT.feature_dim)
    assert np.all(features[frame.point_labels == -1] == 0.0)
    on_first = frame.point_labels == 0
    assert np.allclose(features[on_first], codebook[0])


def test_feature_maps(frame):
    maps = synthesize_feature_maps(frame, EXACT, 3, np.random.default_rng(0))
    assert len(maps) == len(frame.cameras)
    assert maps[0].shape == (224 // 8, 384 // 8, image_feature_dim(3))
    assert maps[0].dtype == torch.float64
    # the proximity peaks at 1 inside a projected box of view 0
    box = project_box3d_to_box2d(frame.cameras[0], frame.boxes[0])
    col = int((box.x_min + box.x_max) / 2 // 8)
    row = int((box.y_min + box.y_max) / 2 // 8)
    assert maps[0][row, col, 0].item() == pytest.approx(1.0)
    assert maps[0][row, col, 1].item() == pytest.approx(1.0)
    assert torch.all(maps[0][..., 0] <= 1.0)


def test_box_center_depth(frame):
    # view 0 looks along +x from 0.5 m in front of the ego origin
    assert box_center_depth(frame, 0, frame.boxes[0]) == pytest.approx(11.5)


def test_oracle_validation():
    with pytest.raises(ConfigurationError):
        OracleConfig(score_noise=-1.0)
    with pytest.raises(ConfigurationError):
        OracleConfig(fn_rate_3d=1.5)
    with pytest.raises(ConfigurationError):
        OracleConfig(min_points=0)

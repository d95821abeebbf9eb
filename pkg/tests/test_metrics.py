from types import SimpleNamespace

import numpy as np
import pytest
import torch

from fusionq.common_types import DTYPE
from fusionq.errors import ConfigurationError
from fusionq.metrics import (
    FramePredictions,
    FrameTruth,
    average_precision,
    bench_sparsity,
    evaluate_center_ap,
    mean_curve,
    per_layer_image_query_mse,
    reference_sparsity,
)


def predictions(centers, scores, classes=None):
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    classes = np.zeros(len(centers), dtype=np.int64) if classes is None else np.asarray(classes)
    return FramePredictions(centers, np.asarray(scores, dtype=np.float64), classes)


def truth(centers, classes=None):
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    classes = np.zeros(len(centers), dtype=np.int64) if classes is None else np.asarray(classes)
    return FrameTruth(centers, classes)


class TestAveragePrecision:
    def test_ranking(self):
        assert average_precision(np.array([0.9, 0.8]), np.array([1.0, 0.0]), 1) == pytest.approx(1.0)
        assert average_precision(np.array([0.9, 0.8]), np.array([0.0, 1.0]), 1) == pytest.approx(0.5)

    def test_degenerate(self):
        assert average_precision(np.zeros(0), np.zeros(0), 3) == 0.0
        assert average_precision(np.array([0.5]), np.array([1.0]), 0) == 0.0


class TestCenterAp:
    def test_exact_prediction(self):
        table = evaluate_center_ap([predictions([[1.0, 2.0]], [0.9])], [truth([[1.0, 2.0]])], [0.5, 1.0], 1)
        assert table.per_class == {0: {0.5: 1.0, 1.0: 1.0}}
        assert table.mean_ap == pytest.approx(1.0)

    def test_far_prediction(self):
        table = evaluate_center_ap([predictions([[10.0, 0.0]], [0.9])], [truth([[0.0, 0.0]])], [0.5], 1)
        assert table.mean_ap == 0.0

    def test_half_recall(self):
        table = evaluate_center_ap([predictions([[0.0, 0.0]], [0.9])],
                                   [truth([[0.0, 0.0], [20.0, 0.0]])], [1.0], 1)
        assert table.mean_ap == pytest.approx(0.5)

    def test_duplicates_are_false_positives(self):
        # a second detection of an already matched object is a false positive
        table = evaluate_center_ap([predictions([[0.0, 0.0], [0.1, 0.0]], [0.9, 0.8])],
                                   [truth([[0.0, 0.0]])], [1.0], 1)
        assert table.mean_ap == pytest.approx(1.0)
        table = evaluate_center_ap([predictions([[0.1, 0.0], [0.0, 0.0]], [0.8, 0.9])],
                                   [truth([[0.0, 0.0]])], [1.0], 1)
        assert table.mean_ap == pytest.approx(1.0)

    def test_threshold_dependence(self):
        table = evaluate_center_ap([predictions([[1.5, 0.0]], [0.9])], [truth([[0.0, 0.0]])], [1.0, 2.0], 1)
        assert table.at(1.0) == 0.0
        assert table.at(2.0) == 1.0
        assert table.to_dict()["per_threshold"] == {"1.0": 0.0, "2.0": 1.0}

    def test_classes_are_separate(self):
        preds = predictions([[0.0, 0.0]], [0.9], classes=[1])
        table = evaluate_center_ap([preds], [truth([[0.0, 0.0]], classes=[0])], [1.0], 3)
        # classes 1 and 2 have no ground truth
        assert list(table.per_class) == [0]
        assert table.mean_ap == 0.0

    def test_no_ground_truth(self):
        table = evaluate_center_ap([predictions([[0.0, 0.0]], [0.9])], [truth(np.zeros((0, 2)))], [1.0], 1)
        assert table.per_class == {}
        assert table.mean_ap == 0.0

    def test_validation(self):
        with pytest.raises(ConfigurationError, match="ascending"):
            evaluate_center_ap([], [], [2.0, 1.0], 1)
        with pytest.raises(ConfigurationError, match="Every frame"):
            evaluate_center_ap([predictions([[0.0, 0.0]], [0.5])], [], [1.0], 1)


def test_per_layer_mse():
    output = SimpleNamespace(
        n_img=1,
        image_anchor_curve=lambda: [torch.tensor([[2.0, 0.0, 0.0]], dtype=DTYPE),
                                    torch.zeros(1, 3, dtype=DTYPE)],
    )
    assert per_layer_image_query_mse(output, torch.zeros(1, 3, dtype=DTYPE)) == pytest.approx([4.0, 0.0])
    assert per_layer_image_query_mse(output, torch.zeros(0, 3, dtype=DTYPE)) == []
    output.n_img = 0
    assert per_layer_image_query_mse(output, torch.zeros(1, 3, dtype=DTYPE)) == []


def test_per_layer_mse_matches_one_to_one():
    anchors = torch.tensor([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [50.0, 0.0, 0.0]], dtype=DTYPE)
    gt = torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], dtype=DTYPE)
    output = SimpleNamespace(n_img=3, image_anchor_curve=lambda: [anchors])
    # (0, 0) and (1, 1) beat any pairing that uses the far anchor
    assert per_layer_image_query_mse(output, gt) == pytest.approx([0.81 / 2])


def test_mean_curve():
    assert mean_curve([[4.0, 2.0], [], [2.0, 0.0]]) == pytest.approx([3.0, 1.0])
    assert mean_curve([[], []]) == []


def test_bench_sparsity():
    points = np.array([[0.1, 0.1, 0.0], [0.2, 0.3, 1.0], [5.5, 5.5, 0.2], [50.0, 0.0, 0.0]])
    frames = [SimpleNamespace(points=points), SimpleNamespace(points=points[:1])]
    report = bench_sparsity(frames, cell_size=1.0, extent=10.0, dense_cell_size=1.0)
    assert report.pillar_count_mean == pytest.approx(1.5)
    assert report.dense_grid_count == 400
    assert report.dense_grid_shape == (20, 20)
    assert report.ratio == pytest.approx(1.5 / 400)


def test_reference_sparsity():
    rows = {row["name"]: row for row in reference_sparsity()}
    long_range = rows["long_range"]
    assert long_range["dense_grid_shape"] == [680, 680]
    assert long_range["dense_grid_count"] == 462400
    assert long_range["ratio"] == pytest.approx(8750 / 462400)
    near_range = rows["near_range"]
    assert near_range["dense_grid_shape"] == [180, 180]
    assert near_range["dense_grid_count"] == 32400
    assert near_range["pillar_count"] == 8814
    assert near_range["ratio"] == pytest.approx(8814 / 32400)

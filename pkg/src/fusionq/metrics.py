"""Evaluation metrics: center-distance AP, per-layer image-query error and
the sparse-pillar vs dense-grid accounting.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from fusionq.common_types import FloatArray, IntArray, Tensor
from fusionq.dataset import FrameSample
from fusionq.decoder import DecoderOutput
from fusionq.errors import ConfigurationError
from fusionq.matching import hungarian_match
from fusionq.pillars import dense_grid_count, grid_shape, pillarize
from fusionq.scenesim import SceneFrame


# (name, dense half-width, dense cell, occupied pillars at that scale)
REFERENCE_SCALES = (("near_range", 54.0, 0.6, 8814), ("long_range", 204.0, 0.6, 8750))


@dataclass(slots=True, eq=False, match_args=False)
class FramePredictions:
    """BEV centers (N×2), confidence scores and class ids of one frame."""
    centers: FloatArray
    scores: FloatArray
    classes: IntArray


@dataclass(slots=True, eq=False, match_args=False)
class FrameTruth:
    centers: FloatArray
    classes: IntArray


@dataclass(slots=True, eq=False, match_args=False)
class ApTable:
    """AP per class id and threshold; classes without GT are absent."""
    per_class: dict[int, dict[float, float]]
    thresholds: tuple[float, ...]

    @property
    def mean_ap(self) -> float:
        values = [ap for row in self.per_class.values() for ap in row.values()]
        return float(np.mean(values)) if values else 0.0

    def at(self, threshold: float) -> float:
        values = [row[threshold] for row in self.per_class.values()]
        return float(np.mean(values)) if values else 0.0

    def to_dict(self) -> dict[str, object]:
        return {
            "per_class": {str(c): {str(t): ap for t, ap in row.items()} for c, row in sorted(self.per_class.items())},
            "per_threshold": {str(t): self.at(t) for t in self.thresholds},
            "mean_ap": self.mean_ap,
        }


def predictions_from_output(output: DecoderOutput) -> FramePredictions:
    """Best class and its probability for every final-layer query."""
    with torch.no_grad():
        if output.logits.shape[0] == 0:
            return FramePredictions(np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64))
        probabilities = torch.sigmoid(output.logits)
        scores, classes = probabilities.max(dim=-1)
        return FramePredictions(
            output.regression[:, :2].numpy().copy(), scores.numpy().copy(), classes.numpy().astype(np.int64),
        )


def truth_from_sample(sample: FrameSample) -> FrameTruth:
    return FrameTruth(sample.gt_boxes[:, :2].numpy().copy(), sample.gt_classes.numpy().astype(np.int64))


def average_precision(scores: FloatArray, hits: FloatArray, n_gt: int) -> float:
    """All-point interpolated AP: area under the monotone precision envelope."""
    if n_gt == 0 or scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    true_positives = np.cumsum(hits[order])
    false_positives = np.cumsum(1 - hits[order])
    recall = true_positives / n_gt
    precision = true_positives / (true_positives + false_positives)

    recall = np.concatenate(([0.0], recall, [1.0]))
    precision = np.concatenate(([0.0], precision, [0.0]))
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def _class_hits(predictions: Sequence[FramePredictions], truths: Sequence[FrameTruth],
                cls: int, threshold: float) -> tuple[FloatArray, FloatArray, int]:
    candidates = [
        (score, frame, row)
        for frame, p in enumerate(predictions)
        for row, score in enumerate(p.scores)
        if p.classes[row] == cls
    ]
    # score descending, then frame and row ascending
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    gt_centers = [t.centers[t.classes == cls] for t in truths]
    taken = [np.zeros(len(c), dtype=bool) for c in gt_centers]

    scores, hits = [], []
    for score, frame, row in candidates:
        centers = gt_centers[frame]
        hit = 0.0
        if len(centers):
            distance = np.linalg.norm(centers - predictions[frame].centers[row], axis=-1)
            distance[taken[frame]] = np.inf
            best = int(np.argmin(distance))
            if distance[best] < threshold:
                taken[frame][best] = True
                hit = 1.0
        scores.append(score)
        hits.append(hit)
    n_gt = sum(len(c) for c in gt_centers)
    return np.asarray(scores, dtype=np.float64), np.asarray(hits, dtype=np.float64), n_gt


def evaluate_center_ap(predictions: Sequence[FramePredictions], truths: Sequence[FrameTruth],
                       thresholds: Sequence[float], n_classes: int) -> ApTable:
    """Score-ranked greedy matching by BEV center distance, per class and threshold."""
    if len(predictions) != len(truths):
        msg = "Every frame needs predictions and ground truth."
        hint = f"Instead, {len(predictions)} prediction frames and {len(truths)} truth frames are given."
        raise ConfigurationError(msg + "\n" + hint)
    if not thresholds or any(t <= 0 for t in thresholds) or list(thresholds) != sorted(thresholds):
        msg = "Distance thresholds must be positive and ascending."
        hint = f"Instead, {list(thresholds)} is given."
        raise ConfigurationError(msg + "\n" + hint)

    per_class = {}
    for cls in range(n_classes):
        if not any(np.any(t.classes == cls) for t in truths):
            continue
        per_class[cls] = {}
        for threshold in thresholds:
            scores, hits, n_gt = _class_hits(predictions, truths, cls, threshold)
            per_class[cls][float(threshold)] = average_precision(scores, hits, n_gt)
    return ApTable(per_class, tuple(float(t) for t in thresholds))


def per_layer_image_query_mse(output: DecoderOutput, gt_centers: Tensor) -> list[float]:
    """Mean squared anchor-to-GT distance of the image queries, before the
    first layer and after each layer; point-cloud queries are left out.
    """
    if output.n_img == 0 or gt_centers.shape[0] == 0:
        return []
    curve = []
    with torch.no_grad():
        for anchors in output.image_anchor_curve():
            squared = torch.cdist(anchors, gt_centers) ** 2
            match = hungarian_match(squared)
            curve.append(float(squared[match.predictions, match.targets].mean().item()))
    return curve


def mean_curve(curves: Sequence[Sequence[float]]) -> list[float]:
    filled = [c for c in curves if c]
    if not filled:
        return []
    return np.mean(np.asarray(filled, dtype=np.float64), axis=0).tolist()


@dataclass(slots=True, frozen=True)
class SparsityReport:
    pillar_count_mean: float
    dense_grid_count: int
    dense_grid_shape: tuple[int, int]
    ratio: float

    def to_dict(self) -> dict[str, object]:
        return {
            "pillar_count_mean": self.pillar_count_mean,
            "dense_grid_count": self.dense_grid_count,
            "dense_grid_shape": list(self.dense_grid_shape),
            "ratio": self.ratio,
        }


def bench_sparsity(frames: Sequence[SceneFrame],
                   /, *,
                   cell_size: float,
                   extent: float,
                   dense_cell_size: float) -> SparsityReport:
    """Mean occupied pillars per frame against the dense grid over the same extent."""
    half_widths = (extent, extent)
    counts = [
        len(pillarize(f.points, np.zeros((f.points.shape[0], 1)), cell_size=cell_size, extent=half_widths))
        for f in frames
    ]
    dense = dense_grid_count(half_widths, dense_cell_size)
    mean = float(np.mean(counts)) if counts else 0.0
    return SparsityReport(mean, dense, grid_shape(half_widths, dense_cell_size), mean / dense)


def reference_sparsity() -> list[dict[str, object]]:
    """Dense grid sizes of the two reference scales against their pillar counts."""
    rows = []
    for name, extent, cell, pillars in REFERENCE_SCALES:
        dense = dense_grid_count((extent, extent), cell)
        row: dict[str, object] = {
            "name": name,
            "extent": extent,
            "dense_cell_size": cell,
            "dense_grid_shape": list(grid_shape((extent, extent), cell)),
            "dense_grid_count": dense,
            "pillar_count": pillars,
            "ratio": pillars / dense,
        }
        rows.append(row)
    return rows

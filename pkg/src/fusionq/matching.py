"""One-to-one label assignment."""

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from fusionq.common_types import IntArray, Tensor
from fusionq.errors import DomainError
from fusionq.geometry import pairwise_iou


@dataclass(slots=True, frozen=True, eq=False)
class MatchResult:
    """Matched (prediction, ground truth) index pairs and unmatched predictions."""
    predictions: IntArray
    targets: IntArray
    unmatched: IntArray

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.predictions.tolist(), self.targets.tolist()))

    def __len__(self) -> int:
        return self.predictions.size


def hungarian_match(cost: Tensor | np.ndarray) -> MatchResult:
    """Minimum-cost assignment of min(M, G) pairs for an M×G cost matrix."""
    matrix = cost.detach().cpu().numpy() if isinstance(cost, Tensor) else np.asarray(cost, dtype=np.float64)
    if matrix.ndim != 2:
        msg = "The cost must be a matrix."
        hint = f"Instead, shape={matrix.shape} is given."
        raise DomainError(msg + "\n" + hint)
    if not np.isfinite(matrix).all():
        raise DomainError("The assignment cost must be finite.")
    if matrix.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return MatchResult(empty, empty, np.arange(matrix.shape[0], dtype=np.int64))

    rows, cols = linear_sum_assignment(matrix)
    unmatched = np.setdiff1d(np.arange(matrix.shape[0]), rows)
    return MatchResult(rows.astype(np.int64), cols.astype(np.int64), unmatched.astype(np.int64))


def normalize_regression(regression: Tensor) -> Tensor:
    """(x, y, z, w, l, h, sin, cos, vx, vy) with the sizes moved to log space."""
    return torch.cat((regression[..., :3], torch.log(regression[..., 3:6]), regression[..., 6:]), dim=-1)


def box_targets(gt_boxes: Tensor) -> Tensor:
    """G×10 normalized targets from G×9 rows (x, y, z, w, l, h, rot, vx, vy)."""
    rot = gt_boxes[..., 6:7]
    return torch.cat((
        gt_boxes[..., :3], torch.log(gt_boxes[..., 3:6]), torch.sin(rot), torch.cos(rot), gt_boxes[..., 7:9],
    ), dim=-1)


def focal_class_cost(logits: Tensor, classes: Tensor, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """M×G focal cost: positive focal term minus negative focal term of the GT class."""
    p = torch.sigmoid(logits[:, classes])
    eps = 1e-12
    positive = alpha * (1 - p) ** gamma * -torch.log(p + eps)
    negative = (1 - alpha) * p ** gamma * -torch.log(1 - p + eps)
    return positive - negative


def match_cost(logits: Tensor, regression: Tensor, gt_classes: Tensor, gt_boxes: Tensor,
               /, *,
               cls_weight: float = 2.0,
               alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """cost[i, j] = λ_cls·focal(i, class_j) + ‖normalized reg_i - target_j‖₁."""
    with torch.no_grad():
        box_cost = torch.cdist(normalize_regression(regression), box_targets(gt_boxes), p=1)
        return cls_weight * focal_class_cost(logits, gt_classes, alpha, gamma) + box_cost


def mutual_best(iou: Tensor, threshold: float) -> list[tuple[int, int]]:
    """Pairs (i, j) where iou[i, j] is the maximum of its row and of its column
    and exceeds `threshold`; ties go to the lowest index.
    """
    if iou.shape[0] == 0 or iou.shape[1] == 0:
        return []
    best_gt = torch.argmax(iou, dim=1)
    best_pred = torch.argmax(iou, dim=0)
    return [
        (i, j)
        for i, j in enumerate(best_gt.tolist())
        if best_pred[j].item() == i and iou[i, j].item() > threshold
    ]


def aux_assign_2d(pred_boxes: Tensor, gt_boxes: Tensor, threshold: float) -> list[tuple[int, int]]:
    """Mutual-best IoU pairs of predicted and GT image boxes."""
    if pred_boxes.shape[0] == 0 or gt_boxes.shape[0] == 0:
        return []
    return mutual_best(pairwise_iou(pred_boxes, gt_boxes), threshold)

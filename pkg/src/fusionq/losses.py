"""Training objective: focal classification, L1 box regression and the
auxiliary depth term of the image queries.
"""

from dataclasses import dataclass

import torch
from torchvision.ops import sigmoid_focal_loss

from fusionq.common_types import DTYPE, Tensor
from fusionq.dataset import FrameSample
from fusionq.decoder import PROBABILITY_FLOOR
from fusionq.errors import ConfigurationError, TrainingError
from fusionq.matching import aux_assign_2d, box_targets, hungarian_match, match_cost, normalize_regression
from fusionq.model import ModelOutput
from fusionq.query_gen import DepthBins, Formulation


@dataclass(slots=True, frozen=True)
class LossWeights:
    cls: float = 2.0
    out: float = 1.0
    aux: float = 0.5
    iou_threshold: float = 0.3
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self) -> None:
        if self.cls < 0 or self.out < 0 or self.aux < 0:
            msg = "Loss weights must not be negative."
            hint = f"Instead, cls={self.cls}, out={self.out} and aux={self.aux} are given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, eq=False, match_args=False)
class LossBreakdown:
    """L_total = λ_out·(λ_cls·L_cls + L_reg) + λ_aux·L_aux, with L_out the bracket."""
    cls: Tensor
    reg: Tensor
    aux: Tensor
    out: Tensor
    total: Tensor
    weights: LossWeights

    def as_dict(self) -> dict[str, float]:
        return {
            "L_total": self.total.item(),
            "L_cls": self.cls.item(),
            "L_reg": self.reg.item(),
            "L_aux": self.aux.item(),
            "L_out": self.out.item(),
        }

    def detached(self) -> "LossBreakdown":
        return LossBreakdown(self.cls.detach(), self.reg.detach(), self.aux.detach(),
                             self.out.detach(), self.total.detach(), self.weights)


def _zero() -> Tensor:
    return torch.zeros((), dtype=DTYPE)


def focal_loss(logits: Tensor, targets: Tensor, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Sigmoid focal loss summed over classes and averaged over predictions.

    `targets` holds a class index per prediction, or -1 for background.
    """
    if logits.shape[0] == 0:
        return _zero()
    one_hot = torch.zeros_like(logits)
    positive = targets >= 0
    one_hot[positive, targets[positive]] = 1.0
    return sigmoid_focal_loss(logits, one_hot, alpha=alpha, gamma=gamma, reduction="none").sum(-1).mean()


def box_reg_loss(regression: Tensor, targets: Tensor) -> Tensor:
    """Mean L1 over matched pairs and the 10 normalized channels; 0 without pairs."""
    if regression.shape[0] == 0:
        return _zero()
    return (normalize_regression(regression) - targets).abs().mean()


def depth_bin_targets(depths: Tensor, bins: DepthBins) -> Tensor:
    """Index of the nearest bin; depths outside the range land on the boundary bins."""
    return torch.argmin((depths.unsqueeze(-1) - bins.values).abs(), dim=-1)


def aux_depth_loss(probabilities: Tensor, depths: Tensor, bins: DepthBins) -> Tensor:
    """Cross-entropy of the depth distributions against one-hot nearest-bin targets."""
    if probabilities.shape[0] == 0:
        return _zero()
    targets = depth_bin_targets(depths, bins)
    chosen = probabilities.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -torch.log(chosen.clamp_min(PROBABILITY_FLOOR)).mean()


def aux_depth_l1(predicted: Tensor, depths: Tensor, bins: DepthBins) -> Tensor:
    """Point formulation: L1 depth error normalized by the depth range."""
    if predicted.shape[0] == 0:
        return _zero()
    return ((predicted - depths).abs() / (bins.d_max - bins.d_min)).mean()


def total_loss(l_cls: Tensor, l_reg: Tensor, l_aux: Tensor, weights: LossWeights) -> LossBreakdown:
    out = weights.cls * l_cls + l_reg
    total = weights.out * out + weights.aux * l_aux
    components = {"L_cls": l_cls, "L_reg": l_reg, "L_aux": l_aux, "L_total": total}
    bad = [name for name, value in components.items() if not bool(torch.isfinite(value).all())]
    if bad:
        raise TrainingError(f"Non-finite loss components: {', '.join(bad)}.")
    return LossBreakdown(l_cls, l_reg, l_aux, out, total, weights)


def detection_losses(output: ModelOutput, sample: FrameSample, weights: LossWeights) -> tuple[Tensor, Tensor]:
    """Focal and L1 terms summed over every decoder layer (shared heads)."""
    targets = box_targets(sample.gt_boxes)
    l_cls, l_reg = _zero(), _zero()
    for layer in output.decoder.layers:
        cost = match_cost(layer.logits, layer.regression, sample.gt_classes, sample.gt_boxes,
                          cls_weight=weights.cls, alpha=weights.focal_alpha, gamma=weights.focal_gamma)
        match = hungarian_match(cost)
        labels = torch.full((layer.logits.shape[0],), -1, dtype=torch.long)
        predictions = torch.from_numpy(match.predictions)
        gts = torch.from_numpy(match.targets)
        labels[predictions] = sample.gt_classes[gts]
        l_cls = l_cls + focal_loss(layer.logits, labels, weights.focal_alpha, weights.focal_gamma)
        l_reg = l_reg + box_reg_loss(layer.regression[predictions], targets[gts])
    return l_cls, l_reg


def auxiliary_loss(output: ModelOutput, sample: FrameSample, bins: DepthBins, weights: LossWeights,
                   formulation: Formulation) -> Tensor:
    """Depth supervision of the initial image-query distributions; queries and
    projected GT boxes are paired per view by mutual-argmax IoU.
    """
    img = output.image_queries
    rows, depths = [], []
    for view_index, view in enumerate(sample.views):
        members = torch.nonzero(img.views == view_index).flatten()
        for i, j in aux_assign_2d(img.boxes[members], view.gt_boxes, weights.iou_threshold):
            rows.append(members[i].item())
            depths.append(view.gt_depths[j])
    if not rows:
        return _zero()
    index = torch.tensor(rows, dtype=torch.long)
    target = torch.stack(depths)
    if formulation is Formulation.POINT:
        return aux_depth_l1(img.depths[index, 0], target, bins)
    return aux_depth_loss(img.probabilities[index], target, bins)


def compute_loss(output: ModelOutput, sample: FrameSample, bins: DepthBins, weights: LossWeights,
                 formulation: Formulation = Formulation.DISTRIBUTION) -> LossBreakdown:
    l_cls, l_reg = detection_losses(output, sample, weights)
    l_aux = auxiliary_loss(output, sample, bins, weights, formulation)
    return total_loss(l_cls, l_reg, l_aux, weights)

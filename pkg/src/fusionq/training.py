"""Optimization: modality mixing, streaming clips and the training step."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from fusionq.config import HistoryConfig, TrainingConfig, check_modality_mix
from fusionq.dataset import FrameSample
from fusionq.errors import ConfigurationError, TrainingError
from fusionq.history import HistoryQueue, history_push_topk
from fusionq.losses import LossBreakdown, LossWeights, compute_loss
from fusionq.model import FusionModel, Modality
from fusionq.numerics import OptimizerState, adam_step, make_optimizer_state


logger = logging.getLogger(__name__)

MODALITY_ORDER = (Modality.CAMERA, Modality.LIDAR, Modality.BOTH)


def sample_modality_mix(rng: np.random.Generator, probabilities: Sequence[float]) -> Modality:
    """Draw camera-only, lidar-only or both with the given probabilities."""
    check_modality_mix(tuple(probabilities))
    return MODALITY_ORDER[int(rng.choice(len(MODALITY_ORDER), p=np.asarray(probabilities, dtype=np.float64)))]


def loss_weights(cfg: TrainingConfig) -> LossWeights:
    return LossWeights(
        cls=cfg.cls_weight,
        out=cfg.out_weight,
        aux=cfg.aux_weight,
        iou_threshold=cfg.iou_threshold,
        focal_alpha=cfg.focal_alpha,
        focal_gamma=cfg.focal_gamma,
    )


def warm_history(model: FusionModel, clip: Sequence[FrameSample], history: HistoryConfig,
                 modality: Modality) -> HistoryQueue | None:
    """Decode every frame but the last without gradients and fill the queue."""
    if history.frames == 0:
        return None
    queue = HistoryQueue(history.per_frame, history.frames)
    with torch.no_grad():
        for sample in clip[:-1]:
            output = model(sample, queue, modality)
            history_push_topk(queue, output.decoder, history.per_frame,
                              ego_pose=sample.ego_pose, timestamp=sample.timestamp)
    return queue


def clip_loss(model: FusionModel, clip: Sequence[FrameSample], cfg: TrainingConfig,
              history: HistoryConfig, modality: Modality) -> LossBreakdown:
    queue = warm_history(model, clip, history, modality)
    output = model(clip[-1], queue, modality)
    return compute_loss(output, clip[-1], model.bins, loss_weights(cfg), model.cfg.formulation)


def _average(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(
        cls=sum(p.cls for p in parts) / n,
        reg=sum(p.reg for p in parts) / n,
        aux=sum(p.aux for p in parts) / n,
        out=sum(p.out for p in parts) / n,
        total=sum(p.total for p in parts) / n,
        weights=parts[0].weights,
    )


def train_step(model: FusionModel, batch: Sequence[Sequence[FrameSample]], state: OptimizerState,
               cfg: TrainingConfig, history: HistoryConfig,
               /, *,
               modality: Modality = Modality.BOTH) -> LossBreakdown:
    """One optimizer step over a batch of clips; only the last frame of every
    clip is supervised.
    """
    if not batch or any(not clip for clip in batch):
        raise ConfigurationError("A training batch needs at least one non-empty clip.")
    model.train()
    try:
        breakdown = _average([clip_loss(model, clip, cfg, history, modality) for clip in batch])
    except TrainingError as e:
        logger.error("Step %d: %s (modality %s, frames %s)", state.steps, e, modality,
                     [clip[-1].index for clip in batch])
        raise

    params = [p for p in model.parameters() if p.requires_grad]
    if breakdown.total.requires_grad:
        grads = torch.autograd.grad(breakdown.total, params, allow_unused=True)
    else:
        grads = (None,) * len(params)
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g
    norm = torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
    if not bool(torch.isfinite(norm)):
        diagnostics = ", ".join(f"{k}={v:.6g}" for k, v in breakdown.as_dict().items())
        raise TrainingError(f"Step {state.steps}: non-finite gradient norm ({diagnostics}).")
    adam_step(params, [p.grad for p in params], state)
    return breakdown.detached()


@dataclass(slots=True, eq=False, match_args=False)
class TrainingRun:
    state: OptimizerState
    rng: np.random.Generator
    rows: list[dict[str, float]] = field(default_factory=list)


def train(model: FusionModel, clips: Sequence[Sequence[FrameSample]], cfg: TrainingConfig,
          history: HistoryConfig,
          /, *,
          seed: int,
          on_step: Callable[[int, LossBreakdown], None] | None = None) -> TrainingRun:
    """Run `cfg.steps` steps over shuffled batches of `clips`."""
    if not clips:
        raise ConfigurationError("Training needs at least one clip.")
    params = [p for p in model.parameters() if p.requires_grad]
    state = make_optimizer_state(
        params, lr=cfg.lr, weight_decay=cfg.weight_decay,
        total_steps=cfg.steps if cfg.cosine and cfg.steps else None,
    )
    rng = np.random.default_rng((seed, 1))
    run = TrainingRun(state, rng)
    order: list[int] = []
    for step in range(cfg.steps):
        batch = []
        for _ in range(cfg.batch):
            if not order:
                order = rng.permutation(len(clips)).tolist()
            batch.append(clips[order.pop()])
        modality = sample_modality_mix(rng, cfg.modality_mix)
        breakdown = train_step(model, batch, state, cfg, history, modality=modality)
        run.rows.append({"step": step + 1, **breakdown.as_dict()})
        if on_step is not None:
            on_step(step + 1, breakdown)
        if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps:
            logger.info("step %d/%d: L_total=%.4f L_cls=%.4f L_reg=%.4f L_aux=%.4f lr=%.2e",
                        step + 1, cfg.steps, breakdown.total.item(), breakdown.cls.item(),
                        breakdown.reg.item(), breakdown.aux.item(), state.lr)
    return run

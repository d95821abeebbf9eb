"""Temporal history queue and its ego-motion compensation."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
from torch import nn

from fusionq.common_types import DTYPE, Tensor
from fusionq.encodings import PositionalEncoder
from fusionq.errors import ConfigurationError
from fusionq.numerics import Mlp, sinpos_encode
from fusionq.query_gen import top_scored

if TYPE_CHECKING:
    from fusionq.decoder import DecoderOutput


logger = logging.getLogger(__name__)

SINGULAR_POSE_TOLERANCE = 1e-12
# Δt, the top three rows of the relative pose, vx, vy
MOTION_SCALARS = 1 + 12 + 2


@dataclass(slots=True, eq=False, match_args=False)
class HistoryFrame:
    """Detached queries of one past frame, stored in that frame's ego frame."""
    contents: Tensor
    positions: Tensor
    velocities: Tensor
    scores: Tensor
    ego_pose: Tensor
    timestamp: float

    def __len__(self) -> int:
        return self.contents.shape[0]


class HistoryQueue:
    """FIFO of at most `frames` past frames with up to `per_frame` queries each."""

    def __init__(self, per_frame: int, frames: int) -> None:
        if per_frame < 0 or frames < 0:
            msg = "The history sizes must not be negative."
            hint = f"Instead, {per_frame=} and {frames=} are given."
            raise ConfigurationError(msg + "\n" + hint)
        self.per_frame = per_frame
        self.frames = frames
        self._frames: deque[HistoryFrame] = deque(maxlen=frames)

    @property
    def capacity(self) -> int:
        return self.per_frame * self.frames

    def __len__(self) -> int:
        return sum(len(f) for f in self._frames)

    def entries(self) -> list[HistoryFrame]:
        """Stored frames, newest first."""
        return list(reversed(self._frames))

    def lags(self, now: float) -> list[float]:
        """Time lag of every stored query, newest first."""
        return [now - f.timestamp for f in self.entries() for _ in range(len(f))]

    def push(self, frame: HistoryFrame) -> None:
        if self.frames == 0:
            return
        self._frames.append(frame)

    def clear(self) -> None:
        self._frames.clear()


def history_push_topk(queue: HistoryQueue, output: DecoderOutput, per_frame: int,
                      /, *,
                      ego_pose: Tensor,
                      timestamp: float) -> HistoryQueue:
    """Push the `per_frame` queries with the highest max class probability of
    the final layer; positions and velocities are the predicted ones.
    """
    if per_frame < 0:
        msg = "The number of pushed queries must not be negative."
        hint = f"Instead, {per_frame=} is given."
        raise ConfigurationError(msg + "\n" + hint)
    final = output.final
    if final.logits.shape[0]:
        scores = torch.sigmoid(final.logits).max(dim=-1).values
    else:
        scores = final.logits.new_zeros(0)
    order = top_scored(scores, per_frame)
    queue.push(HistoryFrame(
        contents=final.contents[order].detach(),
        positions=final.regression[order, :3].detach(),
        velocities=final.regression[order, 8:10].detach(),
        scores=scores[order].detach(),
        ego_pose=ego_pose.detach().clone(),
        timestamp=float(timestamp),
    ))
    return queue


@dataclass(slots=True, eq=False, match_args=False)
class HistoryTokens:
    """History queries moved into the current frame: contents, positional
    encodings and compensated positions.
    """
    contents: Tensor
    encodings: Tensor
    positions: Tensor

    def __len__(self) -> int:
        return self.contents.shape[0]

    @classmethod
    def empty(cls, width: int) -> HistoryTokens:
        return cls(torch.zeros(0, width, dtype=DTYPE), torch.zeros(0, width, dtype=DTYPE),
                   torch.zeros(0, 3, dtype=DTYPE))


class HistoryTransform(nn.Module):
    """q' = φ(q | Δt, P, v).

    Positions go through the relative pose P_now⁻¹·P_then and advance by v·Δt in
    BEV; contents get the residual MLP(SinPos([Δt; P; v])), which starts at zero.
    """

    def __init__(self, width: int, hidden: int,
                 /, *,
                 channels_per_scalar: int = 16,
                 temperature: float = 10000.0) -> None:
        super().__init__()
        self.width = width
        self.channels_per_scalar = channels_per_scalar
        self.temperature = temperature
        self.update = Mlp([MOTION_SCALARS * channels_per_scalar, hidden, width], zero_last=True)

    def forward(self, queue: HistoryQueue, ego_pose: Tensor, now: float,
                encoder: PositionalEncoder) -> HistoryTokens:
        contents, positions = [], []
        for frame in queue.entries():
            if len(frame) == 0:
                continue
            if abs(torch.linalg.det(ego_pose).item()) < SINGULAR_POSE_TOLERANCE \
                    or abs(torch.linalg.det(frame.ego_pose).item()) < SINGULAR_POSE_TOLERANCE:
                logger.warning("Skipping a history frame from t=%.3f: singular ego pose", frame.timestamp)
                continue
            relative = torch.linalg.solve(ego_pose, frame.ego_pose)
            rotation, translation = relative[:3, :3], relative[:3, 3]
            lag = now - frame.timestamp
            velocities = frame.velocities @ rotation[:2, :2].T
            moved = frame.positions @ rotation.T + translation
            moved = torch.cat((moved[:, :2] + velocities * lag, moved[:, 2:]), dim=-1)

            n = len(frame)
            motion = torch.cat((
                torch.full((n, 1), lag, dtype=DTYPE),
                relative[:3].reshape(1, 12).expand(n, 12),
                velocities,
            ), dim=-1)
            update = self.update(sinpos_encode(motion, self.channels_per_scalar, self.temperature))
            contents.append(frame.contents + update)
            positions.append(moved)

        if not contents:
            return HistoryTokens.empty(self.width)
        positions_all = torch.cat(positions)
        return HistoryTokens(torch.cat(contents), encoder(positions_all), positions_all)


def history_transform(transform: HistoryTransform, queue: HistoryQueue, ego_pose: Tensor, now: float,
                      encoder: PositionalEncoder) -> HistoryTokens:
    return transform(queue, ego_pose, now, encoder)

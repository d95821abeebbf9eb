import logging

import pytest
import torch

from fusionq.common_types import DTYPE
from fusionq.decoder import DecoderOutput, LayerOutput
from fusionq.encodings import PositionalEncoder
from fusionq.history import (
    HistoryFrame,
    HistoryQueue,
    HistoryTransform,
    history_push_topk,
    history_transform,
)


def stored_frame(positions, velocities, timestamp=0.0, ego_pose=None, width=8):
    n = len(positions)
    return HistoryFrame(
        contents=torch.arange(n * width, dtype=DTYPE).reshape(n, width),
        positions=torch.tensor(positions, dtype=DTYPE).reshape(n, 3),
        velocities=torch.tensor(velocities, dtype=DTYPE).reshape(n, 2),
        scores=torch.ones(n, dtype=DTYPE),
        ego_pose=torch.eye(4, dtype=DTYPE) if ego_pose is None else ego_pose,
        timestamp=timestamp,
    )


def decoder_output(scores):
    logits = torch.logit(torch.tensor(scores, dtype=DTYPE)).unsqueeze(-1)
    n = logits.shape[0]
    regression = torch.arange(n * 10, dtype=DTYPE).reshape(n, 10)
    layer = LayerOutput(
        contents=torch.randn(n, 8, dtype=DTYPE),
        anchors=regression[:, :3],
        probabilities=torch.ones(n, 1, dtype=DTYPE),
        logits=logits,
        regression=regression,
    )
    return DecoderOutput([layer], regression[:, :3], torch.ones(n, 1, dtype=DTYPE), n, 0)


def translation(x, y):
    pose = torch.eye(4, dtype=DTYPE)
    pose[0, 3], pose[1, 3] = x, y
    return pose


def test_push_topk_by_score():
    queue = HistoryQueue(2, 3)
    history_push_topk(queue, decoder_output([0.9, 0.1, 0.5]), 2, ego_pose=torch.eye(4, dtype=DTYPE), timestamp=0.0)
    (frame,) = queue.entries()
    assert frame.positions[:, 0].tolist() == [0.0, 20.0]
    assert frame.velocities.tolist() == [[8.0, 9.0], [28.0, 29.0]]
    assert frame.scores.tolist() == pytest.approx([0.9, 0.5])
    assert not frame.contents.requires_grad


def test_push_all_when_cap_is_large():
    queue = HistoryQueue(10, 3)
    history_push_topk(queue, decoder_output([0.2, 0.3]), 10, ego_pose=torch.eye(4, dtype=DTYPE), timestamp=0.0)
    assert len(queue) == 2


def test_queue_evicts_oldest_frame():
    queue = HistoryQueue(1, 2)
    for t in (0.0, 0.5, 1.0):
        queue.push(stored_frame([[t, 0, 0]], [[0, 0]], timestamp=t))
    assert [f.timestamp for f in queue.entries()] == [1.0, 0.5]
    assert queue.lags(1.5) == [0.5, 1.0]
    assert queue.capacity == 2
    queue.clear()
    assert len(queue) == 0


def test_queue_without_frames_stays_empty():
    queue = HistoryQueue(4, 0)
    queue.push(stored_frame([[0, 0, 0]], [[0, 0]]))
    assert len(queue) == 0


@pytest.fixture
def transform():
    torch.manual_seed(0)
    return HistoryTransform(8, 16, channels_per_scalar=4), PositionalEncoder(3, 8, 16, channels_per_scalar=4)


def test_static_identity(transform):
    phi, encoder = transform
    queue = HistoryQueue(4, 2)
    frame = stored_frame([[1.0, 2.0, 0.5]], [[0.0, 0.0]])
    queue.push(frame)
    tokens = history_transform(phi, queue, torch.eye(4, dtype=DTYPE), 0.0, encoder)
    assert torch.equal(tokens.contents, frame.contents)
    assert torch.equal(tokens.positions, frame.positions)
    assert torch.allclose(tokens.encodings, encoder(frame.positions))


def test_ego_translation(transform):
    phi, encoder = transform
    queue = HistoryQueue(4, 2)
    queue.push(stored_frame([[10.0, 0.0, 1.0]], [[0.0, 0.0]], ego_pose=torch.eye(4, dtype=DTYPE)))
    tokens = phi(queue, translation(3.0, -1.0), 0.0, encoder)
    assert tokens.positions.tolist() == [pytest.approx([7.0, 1.0, 1.0])]


def test_ego_rotation_turns_velocity(transform):
    phi, encoder = transform
    queue = HistoryQueue(4, 2)
    queue.push(stored_frame([[5.0, 0.0, 0.0]], [[1.0, 0.0]]))
    now = torch.eye(4, dtype=DTYPE)
    now[:2, :2] = torch.tensor([[0.0, -1.0], [1.0, 0.0]], dtype=DTYPE)
    tokens = phi(queue, now, 1.0, encoder)
    # in the turned frame, (5, 0) lies at (0, -5) and the velocity points to -y
    assert tokens.positions.tolist() == [pytest.approx([0.0, -6.0, 0.0])]


def test_constant_velocity(transform):
    phi, encoder = transform
    queue = HistoryQueue(4, 2)
    queue.push(stored_frame([[2.0, 3.0, 0.0]], [[1.0, 0.0]], timestamp=0.0))
    tokens = phi(queue, torch.eye(4, dtype=DTYPE), 0.5, encoder)
    assert tokens.positions.tolist() == [pytest.approx([2.5, 3.0, 0.0])]


def test_singular_pose_is_skipped(transform, caplog):
    phi, encoder = transform
    queue = HistoryQueue(4, 2)
    queue.push(stored_frame([[2.0, 3.0, 0.0]], [[0.0, 0.0]], ego_pose=torch.zeros(4, 4, dtype=DTYPE)))
    queue.push(stored_frame([[1.0, 1.0, 0.0]], [[0.0, 0.0]], timestamp=0.5))
    with caplog.at_level(logging.WARNING, logger="fusionq.history"):
        tokens = phi(queue, torch.eye(4, dtype=DTYPE), 1.0, encoder)
    assert len(tokens) == 1
    assert "singular ego pose" in caplog.text


def test_empty_queue(transform):
    phi, encoder = transform
    tokens = phi(HistoryQueue(4, 2), torch.eye(4, dtype=DTYPE), 0.0, encoder)
    assert len(tokens) == 0
    assert tokens.encodings.shape == (0, 8)

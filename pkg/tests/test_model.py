import pytest
import torch

from fusionq.experiment import build_model, build_samples
from fusionq.history import HistoryQueue, history_push_topk
from fusionq.model import Modality


@pytest.fixture
def setup(tiny_config):
    return build_model(tiny_config), build_samples(tiny_config, "train")[0]


def test_modality_flags():
    assert Modality.BOTH.uses_camera and Modality.BOTH.uses_lidar
    assert Modality.CAMERA.uses_camera and not Modality.CAMERA.uses_lidar
    assert Modality.LIDAR.uses_lidar and not Modality.LIDAR.uses_camera
    assert Modality("camera") is Modality.CAMERA


def test_both_modalities(setup, tiny_config):
    model, samples = setup
    output = model(samples[0])
    decoder = output.decoder
    assert decoder.n_pc == len(output.pc_queries)
    assert decoder.n_img == len(output.image_queries)
    assert decoder.n_pc <= tiny_config.model.pc_cap
    assert len(decoder.layers) == tiny_config.model.layers
    assert decoder.logits.shape == (decoder.n_pc + decoder.n_img, tiny_config.scene.n_classes)
    assert decoder.regression.shape[-1] == 10


def test_camera_only(setup):
    model, samples = setup
    output = model(samples[0], modality=Modality.CAMERA)
    assert len(output.pc_queries) == 0
    assert output.decoder.n_pc == 0
    assert output.decoder.n_img == len(output.image_queries)


def test_lidar_only(setup):
    model, samples = setup
    output = model(samples[0], modality=Modality.LIDAR)
    assert len(output.image_queries) == 0
    assert output.decoder.n_img == 0


def test_history_changes_the_output(setup, tiny_config):
    model, samples = setup
    queue = HistoryQueue(tiny_config.history.per_frame, tiny_config.history.frames)
    with torch.no_grad():
        first = model(samples[0], queue)
        history_push_topk(queue, first.decoder, tiny_config.history.per_frame,
                          ego_pose=samples[0].ego_pose, timestamp=samples[0].timestamp)
        assert len(queue) > 0
        with_history = model(samples[1], queue).decoder.logits
        without = model(samples[1]).decoder.logits
    assert with_history.shape == without.shape
    assert not torch.allclose(with_history, without)


def test_same_seed_same_weights(tiny_config):
    a, b = build_model(tiny_config), build_model(tiny_config)
    for (name, p), q in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(p, q), name


def test_empty_history_changes_nothing(setup, tiny_config):
    model, samples = setup
    queue = HistoryQueue(tiny_config.history.per_frame, tiny_config.history.frames)
    with torch.no_grad():
        with_empty = model(samples[0], queue).decoder
        without = model(samples[0]).decoder
    assert torch.equal(with_empty.logits, without.logits)
    assert torch.equal(with_empty.regression, without.regression)

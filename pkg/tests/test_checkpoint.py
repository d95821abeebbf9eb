from dataclasses import replace

import numpy as np
import pytest
import torch

from fusionq.checkpoint import CHECKPOINT_FORMAT, load_checkpoint, save_checkpoint
from fusionq.config import config_to_dict
from fusionq.errors import CheckpointError
from fusionq.experiment import build_model, run_train
from fusionq.numerics import make_optimizer_state


def test_save_and_restore(tmp_path, tiny_config):
    model = build_model(tiny_config)
    state = make_optimizer_state(model.parameters(), lr=1e-3, total_steps=10)
    state.steps = 4
    rng = np.random.default_rng(5)
    rng.random(3)
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(path, model, state, config=config_to_dict(tiny_config), step=4, rng=rng)
    expected_draw = rng.random()
    expected_torch = torch.rand(2)

    checkpoint = load_checkpoint(path)
    assert checkpoint.step == 4
    assert checkpoint.config == config_to_dict(tiny_config)

    fresh = build_model(replace(tiny_config, seed=99))
    fresh_state = make_optimizer_state(fresh.parameters(), lr=1e-3, total_steps=10)
    fresh_rng = np.random.default_rng(0)
    checkpoint.restore(fresh, fresh_state, fresh_rng, resume=True)

    for name, value in model.state_dict().items():
        assert torch.equal(value, fresh.state_dict()[name]), name
    assert fresh_state.steps == 4
    assert fresh_rng.random() == expected_draw
    assert torch.equal(torch.rand(2), expected_torch)


def test_without_optimizer(tmp_path, tiny_config):
    model = build_model(tiny_config)
    path = tmp_path / "weights.pt"
    save_checkpoint(path, model, None, config={}, step=0)
    checkpoint = load_checkpoint(path)
    assert checkpoint.optimizer is None
    assert checkpoint.numpy_rng is None
    checkpoint.restore(build_model(tiny_config))


def test_loading_weights_keeps_random_states(tmp_path, tiny_config):
    model = build_model(tiny_config)
    rng = np.random.default_rng(5)
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(path, model, None, config={}, step=0, rng=rng)
    target = build_model(tiny_config)
    torch.rand(3)
    live_torch = torch.get_rng_state()
    live_rng = np.random.default_rng(8)
    live_numpy = live_rng.bit_generator.state

    load_checkpoint(path).restore(target, None, live_rng)
    assert torch.equal(torch.get_rng_state(), live_torch)
    assert live_rng.bit_generator.state == live_numpy


def test_training_checkpoint_carries_the_training_generator(tmp_path, tiny_config):
    result = run_train(tiny_config, tmp_path)
    checkpoint = load_checkpoint(tmp_path / "checkpoint.pt")
    assert checkpoint.numpy_rng == result.run.rng.bit_generator.state

    resumed = np.random.default_rng(0)
    checkpoint.restore(build_model(tiny_config), None, resumed, resume=True)
    assert resumed.random() == result.run.rng.random()


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="does not exist"):
        load_checkpoint(tmp_path / "nothing.pt")


def test_not_a_checkpoint(tmp_path):
    garbage = tmp_path / "garbage.pt"
    garbage.write_bytes(b"definitely not a torch archive")
    with pytest.raises(CheckpointError, match="cannot be read"):
        load_checkpoint(garbage)

    foreign = tmp_path / "foreign.pt"
    torch.save({"weights": torch.zeros(1)}, foreign)
    with pytest.raises(CheckpointError, match=CHECKPOINT_FORMAT):
        load_checkpoint(foreign)


def test_unsupported_version(tmp_path):
    path = tmp_path / "future.pt"
    torch.save({"format": CHECKPOINT_FORMAT, "version": 99}, path)
    with pytest.raises(CheckpointError, match="Unsupported checkpoint version 99"):
        load_checkpoint(path)

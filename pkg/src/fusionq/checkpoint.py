"""Versioned checkpoints of the model, optimizer and random states."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from fusionq.errors import CheckpointError
from fusionq.model import FusionModel
from fusionq.numerics import OptimizerState


CHECKPOINT_FORMAT = "fusionq-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(slots=True, eq=False, match_args=False)
class Checkpoint:
    model: dict[str, torch.Tensor]
    optimizer: dict[str, Any] | None
    config: dict[str, Any]
    step: int
    torch_rng: torch.Tensor
    numpy_rng: dict[str, Any] | None

    def restore(self, model: FusionModel, state: OptimizerState | None = None,
                rng: np.random.Generator | None = None,
                /, *,
                resume: bool = False) -> None:
        """Load the stored states into live objects; absent parts are left alone.

        Random states are only touched when `resume` is set, so loading weights
        for evaluation leaves the global torch generator as it is.
        """
        model.load_state_dict(self.model)
        if state is not None and self.optimizer is not None:
            state.load_state_dict(self.optimizer)
        if not resume:
            return
        torch.set_rng_state(self.torch_rng)
        if rng is not None and self.numpy_rng is not None:
            rng.bit_generator.state = self.numpy_rng


def save_checkpoint(path: Path | str, model: FusionModel, state: OptimizerState | None,
                    /, *,
                    config: dict[str, Any],
                    step: int,
                    rng: np.random.Generator | None = None) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.state_dict(),
        "optimizer": None if state is None else state.state_dict(),
        "config": config,
        "step": step,
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": None if rng is None else rng.bit_generator.state,
    }, path)


def load_checkpoint(path: Path | str) -> Checkpoint:
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        raise CheckpointError(f"The checkpoint {str(path)!r} does not exist.") from e
    except Exception as e:  # torch raises plain pickling and runtime errors here
        raise CheckpointError(f"The checkpoint {str(path)!r} cannot be read: {e}") from e
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"The file {str(path)!r} is not a {CHECKPOINT_FORMAT} archive.")
    if data.get("version") != CHECKPOINT_VERSION:
        msg = f"Unsupported checkpoint version {data.get('version')!r}."
        hint = f"Only version {CHECKPOINT_VERSION} can be read."
        raise CheckpointError(msg + "\n" + hint)
    return Checkpoint(
        model=data["model"],
        optimizer=data["optimizer"],
        config=data["config"],
        step=int(data["step"]),
        torch_rng=data["torch_rng"],
        numpy_rng=data["numpy_rng"],
    )

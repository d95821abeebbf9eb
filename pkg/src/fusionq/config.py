"""Experiment configuration.

A YAML file mirrors `ExperimentConfig`: top-level `seed` plus one mapping per
section. Missing keys keep their defaults; unknown keys, wrong types and
violated invariants raise `ConfigurationError` naming the key.
"""

import hashlib
import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, TypeVar

import yaml

from fusionq.errors import ConfigurationError
from fusionq.oracles import OracleConfig
from fusionq.query_gen import Formulation
from fusionq.scenesim import SceneConfig


ModalityMix = tuple[float, float, float]


@dataclass(slots=True, frozen=True)
class ModelConfig:
    width: int = 64
    heads: int = 4
    layers: int = 6
    samples: int = 4
    hidden: int = 128
    ffn_hidden: int = 128
    conv_dim: int = 32
    roi_size: int = 7
    formulation: Formulation = Formulation.DISTRIBUTION
    d_min: float = 1.0
    d_max: float = 60.0
    n_d: int = 16
    img_cap: int = 60
    pc_cap: int = 200
    use_cross_attention: bool = True
    pillar_cell_size: float = 0.6
    channels_per_scalar: int = 16
    offset_scale: float = 4.0
    position_scale: float = 10.0

    def __post_init__(self) -> None:
        if self.layers < 1:
            msg = "The decoder needs at least one layer."
            hint = f"Instead, layers={self.layers} is given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.roi_size < 1 or self.img_cap < 0 or self.pc_cap < 0:
            msg = "The RoI size must be positive and the query caps must not be negative."
            hint = f"Instead, roi_size={self.roi_size}, img_cap={self.img_cap} and pc_cap={self.pc_cap} are given."
            raise ConfigurationError(msg + "\n" + hint)
        object.__setattr__(self, "formulation", Formulation(self.formulation))


@dataclass(slots=True, frozen=True)
class HistoryConfig:
    """`per_frame` queries (K_h) of each of the last `frames` frames (T)."""
    per_frame: int = 16
    frames: int = 4

    def __post_init__(self) -> None:
        if self.per_frame < 0 or self.frames < 0:
            msg = "The history sizes must not be negative."
            hint = f"Instead, per_frame={self.per_frame} and frames={self.frames} are given."
            raise ConfigurationError(msg + "\n" + hint)


def check_modality_mix(mix: tuple[float, ...]) -> None:
    if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1) > 1e-9:
        msg = "A modality mix is three non-negative probabilities (camera, lidar, both) summing to 1."
        hint = f"Instead, {tuple(mix)} is given."
        raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class TrainingConfig:
    steps: int = 200
    lr: float = 4e-4
    weight_decay: float = 0.01
    clip_norm: float = 35.0
    cosine: bool = True
    batch: int = 1
    sequences: int = 5
    modality_mix: ModalityMix = (0.0, 0.0, 1.0)
    cls_weight: float = 2.0
    out_weight: float = 1.0
    aux_weight: float = 0.5
    iou_threshold: float = 0.3
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch < 1 or self.sequences < 1 or self.log_every < 1:
            msg = "Steps must not be negative; batch, sequences and log_every must be positive."
            hint = (f"Instead, steps={self.steps}, batch={self.batch}, sequences={self.sequences} "
                    f"and log_every={self.log_every} are given.")
            raise ConfigurationError(msg + "\n" + hint)
        if self.lr < 0 or self.weight_decay < 0 or self.clip_norm <= 0:
            msg = "The learning rate and weight decay must not be negative; the clip norm must be positive."
            hint = f"Instead, lr={self.lr}, weight_decay={self.weight_decay} and clip_norm={self.clip_norm} are given."
            raise ConfigurationError(msg + "\n" + hint)
        for name in ("cls_weight", "out_weight", "aux_weight"):
            if getattr(self, name) < 0:
                msg = f"The loss weight `{name}` must not be negative."
                hint = f"Instead, {name}={getattr(self, name)} is given."
                raise ConfigurationError(msg + "\n" + hint)
        if not 0 < self.focal_alpha < 1 or self.focal_gamma < 0:
            msg = "The focal loss needs alpha in (0, 1) and gamma >= 0."
            hint = f"Instead, focal_alpha={self.focal_alpha} and focal_gamma={self.focal_gamma} are given."
            raise ConfigurationError(msg + "\n" + hint)
        check_modality_mix(self.modality_mix)


@dataclass(slots=True, frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    sequences: int = 2
    robustness: bool = True

    def __post_init__(self) -> None:
        if not self.thresholds or any(t <= 0 for t in self.thresholds) \
                or list(self.thresholds) != sorted(set(self.thresholds)):
            msg = "Distance thresholds must be positive and strictly ascending."
            hint = f"Instead, thresholds={self.thresholds} is given."
            raise ConfigurationError(msg + "\n" + hint)
        if self.sequences < 1:
            msg = "Evaluation needs at least one sequence."
            hint = f"Instead, sequences={self.sequences} is given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class BenchConfig:
    """Long-range scene used to count pillars against a dense BEV grid."""
    extent: float = 204.8
    cell_size: float = 0.2
    dense_cell_size: float = 0.6
    max_range: float = 220.0
    n_frames: int = 3
    n_objects: tuple[int, int] = (40, 60)

    def __post_init__(self) -> None:
        if self.extent <= 0 or self.cell_size <= 0 or self.dense_cell_size <= 0 or self.n_frames < 1:
            msg = "The extent, both cell sizes and the frame count must be positive."
            hint = (f"Instead, extent={self.extent}, cell_size={self.cell_size}, "
                    f"dense_cell_size={self.dense_cell_size} and n_frames={self.n_frames} are given.")
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class AblationConfig:
    """Factor levels of the ablation grid; the grid is their full product."""
    formulation: tuple[str, ...] = ("distribution", "point")
    cross_attention: tuple[bool, ...] = (True, False)
    history_frames: tuple[int, ...] = (0, 4)
    modality_mix: tuple[ModalityMix, ...] = ((0.0, 0.0, 1.0), (0.2, 0.1, 0.7))

    def __post_init__(self) -> None:
        for name in ("formulation", "cross_attention", "history_frames", "modality_mix"):
            levels = getattr(self, name)
            if not levels or len(set(levels)) != len(levels):
                msg = f"The ablation factor `{name}` needs unique levels."
                hint = f"Instead, {name}={levels} is given."
                raise ConfigurationError(msg + "\n" + hint)
        for level in self.formulation:
            Formulation(level)
        for mix in self.modality_mix:
            check_modality_mix(mix)
        if any(frames < 0 for frames in self.history_frames):
            msg = "History levels must not be negative."
            hint = f"Instead, history_frames={self.history_frames} is given."
            raise ConfigurationError(msg + "\n" + hint)


@dataclass(slots=True, frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    history: HistoryConfig = field(default_factory=HistoryConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    ablate: AblationConfig = field(default_factory=AblationConfig)


T = TypeVar("T")


def _type_error(key: str, expected: str, value: Any) -> ConfigurationError:
    msg = f"The key `{key}` must be {expected}."
    hint = f"Instead, {value!r} is given."
    return ConfigurationError(msg + "\n" + hint)


def _coerce(default: Any, value: Any, key: str) -> Any:
    if is_dataclass(default):
        return build_section(type(default), value, key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise _type_error(key, "a boolean", value)
        return value
    if isinstance(default, StrEnum):
        try:
            return type(default)(value)
        except ValueError:
            raise _type_error(key, f"one of {[m.value for m in type(default)]}", value) from None
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise _type_error(key, "an integer", value)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise _type_error(key, "a number", value)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise _type_error(key, "a string", value)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list | tuple):
            raise _type_error(key, "a list", value)
        if not default:
            return tuple(value)
        return tuple(_coerce(default[0], item, f"{key}[{i}]") for i, item in enumerate(value))
    raise _type_error(key, type(default).__name__, value)


def build_section(cls: type[T], data: Any, key: str) -> T:
    """Build the dataclass `cls` from a mapping, starting from its defaults."""
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise _type_error(key, "a mapping", data)
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        msg = f"Unknown key `{key}.{unknown[0]}`." if key else f"Unknown key `{unknown[0]}`."
        hint = f"Known keys are {sorted(names)}."
        raise ConfigurationError(msg + "\n" + hint)

    kwargs = {
        name: _coerce(getattr(defaults, name), value, f"{key}.{name}" if key else name)
        for name, value in data.items()
    }
    try:
        return replace(defaults, **kwargs)
    except ConfigurationError as e:
        raise ConfigurationError(f"Invalid section `{key or 'top level'}`: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid section `{key or 'top level'}`: {e}") from e


def parse_config(data: Any) -> ExperimentConfig:
    return build_section(ExperimentConfig, data, "")


def load_config(path: Path | str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as stream:
            data = yaml.safe_load(stream)
    except OSError as e:
        raise ConfigurationError(f"Cannot read the configuration file {str(path)!r}: {e.strerror}.") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"The configuration file {str(path)!r} is not valid YAML:\n{e}") from e
    return parse_config(data)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Plain JSON-compatible mapping (tuples become lists)."""
    return json.loads(json.dumps(asdict(cfg)))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical sorted-key JSON dump."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seed=seed)

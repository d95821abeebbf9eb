"""Experiment orchestration behind the command-line subcommands.

Every artifact carries the configuration hash and the seed. Wall-clock
timings only go to `timings.json`, so repeated runs write byte-identical
reports.
"""

import csv
import itertools
import json
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import torch

from fusionq.checkpoint import load_checkpoint, save_checkpoint
from fusionq.config import ExperimentConfig, config_hash, config_to_dict, dump_config, parse_config
from fusionq.dataset import FrameSample, make_clips, prepare_sample
from fusionq.history import HistoryQueue, history_push_topk
from fusionq.metrics import (
    ApTable,
    bench_sparsity,
    evaluate_center_ap,
    mean_curve,
    per_layer_image_query_mse,
    predictions_from_output,
    reference_sparsity,
    truth_from_sample,
)
from fusionq.model import FusionModel, Modality
from fusionq.oracles import image_feature_dim
from fusionq.pillars import dense_grid_count
from fusionq.scene_io import serialize_sequence
from fusionq.scenesim import SceneFrame, generate_sequence
from fusionq.training import TrainingRun, train


logger = logging.getLogger(__name__)

SPLITS = {"train": 0, "eval": 1, "bench": 2}
LOSS_COLUMNS = ("step", "L_total", "L_cls", "L_reg", "L_aux")


def stamp(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, cfg: ExperimentConfig, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as stream:
        stream.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def sequence_seeds(cfg: ExperimentConfig, split: str, count: int) -> list[int]:
    state = np.random.SeedSequence((cfg.seed, SPLITS[split])).generate_state(count)
    return [int(s) for s in state]


def build_sequences(cfg: ExperimentConfig, split: str) -> list[list[SceneFrame]]:
    count = cfg.training.sequences if split == "train" else cfg.eval.sequences
    return [generate_sequence(replace(cfg.scene, seed=seed)) for seed in sequence_seeds(cfg, split, count)]


def prepare_sequence(cfg: ExperimentConfig, frames: Sequence[SceneFrame], seed: int) -> list[FrameSample]:
    return [
        prepare_sample(
            frame, cfg.oracle,
            n_classes=cfg.scene.n_classes,
            cell_size=cfg.model.pillar_cell_size,
            extent=cfg.scene.extent,
            seed=seed,
        )
        for frame in frames
    ]


def build_samples(cfg: ExperimentConfig, split: str) -> list[list[FrameSample]]:
    sequences = build_sequences(cfg, split)
    seeds = sequence_seeds(cfg, split, len(sequences))
    return [prepare_sequence(cfg, frames, seed) for frames, seed in zip(sequences, seeds)]


def build_model(cfg: ExperimentConfig) -> FusionModel:
    torch.manual_seed(cfg.seed)
    return FusionModel(
        cfg.model,
        n_classes=cfg.scene.n_classes,
        image_feature_dim=image_feature_dim(cfg.scene.n_classes),
        point_feature_dim=cfg.oracle.feature_dim,
    )


def clip_length(cfg: ExperimentConfig) -> int:
    return cfg.history.frames + 1


@dataclass(slots=True, eq=False, match_args=False)
class TrainResult:
    model: FusionModel
    run: TrainingRun
    seconds: float


def fit(cfg: ExperimentConfig) -> TrainResult:
    started = time.perf_counter()
    sequences = build_samples(cfg, "train")
    clips = [clip for samples in sequences for clip in make_clips(samples, clip_length(cfg))]
    logger.info("Training on %d clips from %d sequences", len(clips), len(sequences))
    model = build_model(cfg)
    run = train(model, clips, cfg.training, cfg.history, seed=cfg.seed)
    return TrainResult(model, run, time.perf_counter() - started)


def run_train(cfg: ExperimentConfig, out: Path) -> TrainResult:
    out.mkdir(parents=True, exist_ok=True)
    result = fit(cfg)
    _write_csv(out / "loss.csv", cfg, LOSS_COLUMNS,
               [[row[c] for c in LOSS_COLUMNS] for row in result.run.rows])
    save_checkpoint(out / "checkpoint.pt", result.model, result.run.state,
                    config=config_to_dict(cfg), step=result.run.state.steps, rng=result.run.rng)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    _write_json(out / "timings.json", {**stamp(cfg), "train_seconds": result.seconds})
    logger.info("Wrote the checkpoint and loss curve to %s", out)
    return result


@dataclass(slots=True, eq=False, match_args=False)
class ModalityEval:
    ap: ApTable
    mse_layers: list[float]
    pc_queries: float
    img_queries: float


def evaluate(model: FusionModel, sequences: Sequence[Sequence[FrameSample]], cfg: ExperimentConfig,
             modality: Modality = Modality.BOTH) -> ModalityEval:
    """Stream every sequence in order, feeding the history queue as in training."""
    model.eval()
    predictions, truths, curves, pc_counts, img_counts = [], [], [], [], []
    with torch.no_grad():
        for samples in sequences:
            queue = HistoryQueue(cfg.history.per_frame, cfg.history.frames) if cfg.history.frames else None
            for sample in samples:
                output = model(sample, queue, modality)
                if queue is not None:
                    history_push_topk(queue, output.decoder, cfg.history.per_frame,
                                      ego_pose=sample.ego_pose, timestamp=sample.timestamp)
                predictions.append(predictions_from_output(output.decoder))
                truths.append(truth_from_sample(sample))
                curves.append(per_layer_image_query_mse(output.decoder, sample.gt_boxes[:, :3]))
                pc_counts.append(len(output.pc_queries))
                img_counts.append(len(output.image_queries))
    ap = evaluate_center_ap(predictions, truths, cfg.eval.thresholds, cfg.scene.n_classes)
    return ModalityEval(ap, mean_curve(curves), float(np.mean(pc_counts)), float(np.mean(img_counts)))


@dataclass(slots=True, eq=False, match_args=False)
class EvalReport:
    """Everything `report.json` holds; `seconds` is kept for `timings.json` only."""
    header: dict[str, Any]
    fused: ModalityEval
    robustness: dict[str, float]
    pillars: dict[str, float]
    seconds: float = field(default=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.header,
            "ap": self.fused.ap.to_dict(),
            "mean_ap": self.fused.ap.mean_ap,
            "modality_ap": self.robustness,
            "mse_layers": self.fused.mse_layers,
            "query_counts": {"pc_mean": self.fused.pc_queries, "img_mean": self.fused.img_queries},
            "pillars": self.pillars,
        }


def run_eval_model(cfg: ExperimentConfig, model: FusionModel) -> EvalReport:
    started = time.perf_counter()
    sequences = build_samples(cfg, "eval")
    fused = evaluate(model, sequences, cfg, Modality.BOTH)
    robustness = {Modality.BOTH.value: fused.ap.mean_ap}
    if cfg.eval.robustness:
        for modality in (Modality.CAMERA, Modality.LIDAR):
            robustness[modality.value] = evaluate(model, sequences, cfg, modality).ap.mean_ap
    pillar_counts = [len(s.pillars) for samples in sequences for s in samples]
    dense = dense_grid_count((cfg.scene.extent, cfg.scene.extent), cfg.model.pillar_cell_size)
    mean_pillars = float(np.mean(pillar_counts)) if pillar_counts else 0.0
    pillars = {"pillar_count_mean": mean_pillars, "dense_grid_count": dense, "ratio": mean_pillars / dense}
    return EvalReport(stamp(cfg), fused, robustness, pillars, time.perf_counter() - started)


def model_from_checkpoint(cfg: ExperimentConfig, path: Path) -> tuple[ExperimentConfig, FusionModel]:
    """Rebuild the trained model; the architecture comes from the checkpoint."""
    checkpoint = load_checkpoint(path)
    trained = parse_config(checkpoint.config)
    if config_hash(trained) != config_hash(cfg):
        logger.warning("The checkpoint was trained with a different configuration; using its model settings")
        cfg = replace(cfg, model=trained.model, scene=replace(cfg.scene, n_classes=trained.scene.n_classes),
                      oracle=replace(cfg.oracle, feature_dim=trained.oracle.feature_dim))
    model = build_model(cfg)
    checkpoint.restore(model)
    return cfg, model


def run_eval(cfg: ExperimentConfig, out: Path, checkpoint: Path | None = None) -> EvalReport:
    out.mkdir(parents=True, exist_ok=True)
    if checkpoint is None:
        logger.info("No checkpoint given; training one first")
        model = run_train(cfg, out).model
    else:
        cfg, model = model_from_checkpoint(cfg, checkpoint)
    report = run_eval_model(cfg, model)
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "mse_layers.csv", cfg, ("layer", "mse"), list(enumerate(report.fused.mse_layers)))
    _write_json(out / "eval_timings.json", {**stamp(cfg), "eval_seconds": report.seconds})
    logger.info("mean AP %.4f (camera %s, lidar %s)", report.fused.ap.mean_ap,
                report.robustness.get("camera"), report.robustness.get("lidar"))
    return report


def ablation_variants(cfg: ExperimentConfig) -> list[tuple[dict[str, Any], ExperimentConfig]]:
    """Every combination of the configured factor levels, in grid order."""
    levels = cfg.ablate
    variants = []
    for formulation, cross, frames, mix in itertools.product(
        levels.formulation, levels.cross_attention, levels.history_frames, levels.modality_mix,
    ):
        factors = {
            "formulation": formulation,
            "cross_attention": cross,
            "history_frames": frames,
            "modality_mix": list(mix),
        }
        variant = replace(
            cfg,
            model=replace(cfg.model, formulation=formulation, use_cross_attention=cross),
            history=replace(cfg.history, frames=frames),
            training=replace(cfg.training, modality_mix=tuple(mix)),
        )
        variants.append((factors, variant))
    return variants


def run_ablate(cfg: ExperimentConfig, out: Path) -> list[dict[str, Any]]:
    out.mkdir(parents=True, exist_ok=True)
    rows, seconds = [], {}
    variants = ablation_variants(cfg)
    for index, (factors, variant) in enumerate(variants):
        logger.info("Ablation %d/%d: %s", index + 1, len(variants), factors)
        result = fit(variant)
        report = run_eval_model(variant, result.model)
        rows.append({
            **factors,
            **stamp(variant),
            "mean_ap": report.fused.ap.mean_ap,
            "per_threshold": report.fused.ap.to_dict()["per_threshold"],
            "modality_ap": report.robustness,
            "final_loss": result.run.rows[-1]["L_total"] if result.run.rows else None,
            "mse_layers": report.fused.mse_layers,
        })
        seconds[str(index)] = result.seconds + report.seconds
    _write_json(out / "ablation.json", {**stamp(cfg), "rows": rows})
    header = ("formulation", "cross_attention", "history_frames", "modality_mix", "mean_ap", "final_loss")
    _write_csv(out / "ablation.csv", cfg, header,
               [[json.dumps(row[c]) if isinstance(row[c], list) else row[c] for c in header] for row in rows])
    _write_json(out / "ablation_timings.json", {**stamp(cfg), "seconds": seconds})
    return rows


def run_bench_sparsity(cfg: ExperimentConfig, out: Path) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    bench = cfg.bench
    scene = replace(
        cfg.scene,
        extent=bench.extent,
        n_frames=bench.n_frames,
        n_objects=bench.n_objects,
        seed=sequence_seeds(cfg, "bench", 1)[0],
        lidar=replace(cfg.scene.lidar, max_range=bench.max_range),
    )
    report = bench_sparsity(generate_sequence(scene), cell_size=bench.cell_size, extent=bench.extent,
                            dense_cell_size=bench.dense_cell_size)
    result = {**stamp(cfg), "synthetic": report.to_dict(), "reference": reference_sparsity()}
    _write_json(out / "sparsity.json", result)
    logger.info("%.1f pillars per frame vs %d dense cells (ratio %.4f)",
                report.pillar_count_mean, report.dense_grid_count, report.ratio)
    return result


def run_gen_scenes(cfg: ExperimentConfig, out: Path) -> list[Path]:
    scenes = out / "scenes"
    scenes.mkdir(parents=True, exist_ok=True)
    paths = []
    for split in ("train", "eval"):
        for index, frames in enumerate(build_sequences(cfg, split)):
            path = scenes / f"{split}_{index:02d}.jsonl"
            serialize_sequence(frames, path)
            paths.append(path)
    _write_json(out / "scenes.json", {**stamp(cfg), "files": [p.name for p in paths]})
    logger.info("Wrote %d scene files to %s", len(paths), scenes)
    return paths

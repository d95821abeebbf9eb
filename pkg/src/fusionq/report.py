"""Static plots and a summary table from the artifacts of earlier runs."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update({
    "font.family": "DejaVu Sans",
    "axes.unicode_minus": False,
    "svg.hashsalt": "fusionq",
    "svg.fonttype": "path",
})
import matplotlib.pyplot as plt  # noqa: E402


logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("source", "metric", "value")


def read_stamped_csv(path: Path) -> list[dict[str, str]]:
    """Rows of a CSV whose first line may be a `# config_hash=... seed=...` comment."""
    with open(path, encoding="utf-8", newline="") as stream:
        lines = [line for line in stream if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _save(fig: Any, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_loss_curve(rows: list[dict[str, str]], path: Path) -> Path:
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.6), constrained_layout=True)
    for column in ("L_total", "L_cls", "L_reg", "L_aux"):
        ax.plot(steps, [float(r[column]) for r in rows], label=column)
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_mse_curve(rows: list[dict[str, str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6), constrained_layout=True)
    ax.plot([int(r["layer"]) for r in rows], [float(r["mse"]) for r in rows], marker="o")
    ax.set_xlabel("Layer (0 = initial queries)")
    ax.set_ylabel("Image-query center MSE (m²)")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_ap_bars(report: dict[str, Any], path: Path) -> Path:
    per_threshold = report["ap"]["per_threshold"]
    labels = sorted(per_threshold, key=float)
    fig, ax = plt.subplots(figsize=(6, 3.6), constrained_layout=True)
    ax.bar([f"{float(t):g} m" for t in labels], [per_threshold[t] for t in labels])
    ax.set_xlabel("Center-distance threshold")
    ax.set_ylabel("AP")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def plot_ablation(rows: list[dict[str, Any]], path: Path) -> Path:
    labels = [
        f"{r['formulation']}\nxattn={'on' if r['cross_attention'] else 'off'} T={r['history_frames']}\n"
        f"mix={','.join(f'{p:g}' for p in r['modality_mix'])}"
        for r in rows
    ]
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4), constrained_layout=True)
    ax.bar(range(len(rows)), [r["mean_ap"] for r in rows])
    ax.set_xticks(range(len(rows)), labels, fontsize=6)
    ax.set_ylabel("mean AP")
    ax.set_ylim(0.0, 1.0)
    return _save(fig, path)


@dataclass(slots=True, eq=False, match_args=False)
class ReportSummary:
    plots: list[Path] = field(default_factory=list)
    rows: list[tuple[str, str, str]] = field(default_factory=list)

    def add(self, source: str, metric: str, value: Any) -> None:
        self.rows.append((source, metric, f"{value:.6g}" if isinstance(value, float) else str(value)))


def _load(path: Path, reader: Any) -> Any | None:
    if not path.exists():
        return None
    try:
        return reader(path)
    except (OSError, ValueError, KeyError, csv.Error) as e:
        logger.warning("Skipping %s: %s", path.name, e)
        return None


def _read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def emit_report(artifacts: Path | str, out: Path | str | None = None) -> ReportSummary:
    """Plot whatever artifacts exist in `artifacts`; missing ones are skipped."""
    artifacts = Path(artifacts)
    out = artifacts if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = ReportSummary()

    loss = _load(artifacts / "loss.csv", read_stamped_csv)
    if loss:
        summary.plots.append(plot_loss_curve(loss, out / "loss_curve.svg"))
        summary.add("loss.csv", "final_L_total", float(loss[-1]["L_total"]))
        summary.add("loss.csv", "steps", len(loss))
    else:
        logger.info("No loss curve in %s", artifacts)

    mse = _load(artifacts / "mse_layers.csv", read_stamped_csv)
    if mse:
        summary.plots.append(plot_mse_curve(mse, out / "mse_layers.svg"))
        summary.add("mse_layers.csv", "initial_mse", float(mse[0]["mse"]))
        summary.add("mse_layers.csv", "final_mse", float(mse[-1]["mse"]))

    report = _load(artifacts / "report.json", _read_json)
    if report is not None:
        summary.plots.append(plot_ap_bars(report, out / "ap_bars.svg"))
        summary.add("report.json", "mean_ap", float(report["mean_ap"]))
        for modality, ap in sorted(report.get("modality_ap", {}).items()):
            summary.add("report.json", f"mean_ap_{modality}", float(ap))
        summary.add("report.json", "config_hash", report["config_hash"])

    ablation = _load(artifacts / "ablation.json", _read_json)
    if ablation is not None and ablation.get("rows"):
        summary.plots.append(plot_ablation(ablation["rows"], out / "ablation.svg"))
        best = max(ablation["rows"], key=lambda r: r["mean_ap"])
        summary.add("ablation.json", "variants", len(ablation["rows"]))
        summary.add("ablation.json", "best_mean_ap", float(best["mean_ap"]))

    sparsity = _load(artifacts / "sparsity.json", _read_json)
    if sparsity is not None:
        summary.add("sparsity.json", "pillar_count_mean", float(sparsity["synthetic"]["pillar_count_mean"]))
        summary.add("sparsity.json", "ratio", float(sparsity["synthetic"]["ratio"]))

    write_summary(summary, out)
    logger.info("Wrote %d plots and %d summary rows to %s", len(summary.plots), len(summary.rows), out)
    return summary


def write_summary(summary: ReportSummary, out: Path) -> None:
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(summary.rows)
    lines = ["| " + " | ".join(SUMMARY_COLUMNS) + " |", "|" + "---|" * len(SUMMARY_COLUMNS)]
    lines += ["| " + " | ".join(row) + " |" for row in summary.rows]
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

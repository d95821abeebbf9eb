import json
import logging

from fusionq.report import emit_report, read_stamped_csv

REPORT = {
    "config_hash": "abc",
    "seed": 0,
    "ap": {"per_class": {}, "per_threshold": {"0.5": 0.25, "1.0": 0.5, "2.0": 0.75}, "mean_ap": 0.5},
    "mean_ap": 0.5,
    "modality_ap": {"both": 0.5, "camera": 0.3, "lidar": 0.4},
    "mse_layers": [4.0, 2.0],
    "query_counts": {"pc_mean": 3.0, "img_mean": 2.0},
    "pillars": {"pillar_count_mean": 10.0, "dense_grid_count": 100, "ratio": 0.1},
}


def write_artifacts(path):
    (path / "loss.csv").write_text(
        "# config_hash=abc seed=0\n"
        "step,L_total,L_cls,L_reg,L_aux\n"
        "1,3.0,1.0,0.5,0.2\n"
        "2,2.0,0.6,0.4,0.2\n",
        encoding="utf-8",
    )
    (path / "mse_layers.csv").write_text("# config_hash=abc seed=0\nlayer,mse\n0,4.0\n1,2.0\n", encoding="utf-8")
    (path / "report.json").write_text(json.dumps(REPORT), encoding="utf-8")
    (path / "ablation.json").write_text(json.dumps({"rows": [
        {"formulation": "distribution", "cross_attention": True, "history_frames": 0,
         "modality_mix": [0.0, 0.0, 1.0], "mean_ap": 0.4},
        {"formulation": "point", "cross_attention": False, "history_frames": 4,
         "modality_mix": [0.2, 0.1, 0.7], "mean_ap": 0.6},
    ]}), encoding="utf-8")


def test_read_stamped_csv(tmp_path):
    write_artifacts(tmp_path)
    rows = read_stamped_csv(tmp_path / "loss.csv")
    assert [r["step"] for r in rows] == ["1", "2"]
    assert rows[1]["L_total"] == "2.0"


def test_empty_directory(tmp_path):
    summary = emit_report(tmp_path)
    assert summary.plots == []
    assert summary.rows == []
    assert (tmp_path / "summary.md").read_text(encoding="utf-8").count("\n") == 2


def test_full_report(tmp_path):
    write_artifacts(tmp_path)
    out = tmp_path / "plots"
    summary = emit_report(tmp_path, out)
    assert sorted(p.name for p in summary.plots) == [
        "ablation.svg", "ap_bars.svg", "loss_curve.svg", "mse_layers.svg",
    ]
    for plot in summary.plots:
        assert plot.read_text(encoding="utf-8").lstrip().startswith("<?xml")
    rows = {(source, metric): value for source, metric, value in summary.rows}
    assert rows[("loss.csv", "final_L_total")] == "2"
    assert rows[("report.json", "mean_ap")] == "0.5"
    assert rows[("report.json", "mean_ap_camera")] == "0.3"
    assert rows[("ablation.json", "best_mean_ap")] == "0.6"
    assert rows[("mse_layers.csv", "final_mse")] == "2"
    assert (out / "summary.csv").read_text(encoding="utf-8").startswith("source,metric,value\n")


def test_plots_are_reproducible(tmp_path):
    write_artifacts(tmp_path)
    first = emit_report(tmp_path, tmp_path / "a")
    second = emit_report(tmp_path, tmp_path / "b")
    for a, b in zip(first.plots, second.plots):
        assert a.read_bytes() == b.read_bytes()


def test_broken_artifact_is_skipped(tmp_path, caplog):
    write_artifacts(tmp_path)
    (tmp_path / "report.json").write_text("{not json", encoding="utf-8")
    with caplog.at_level(logging.WARNING, logger="fusionq.report"):
        summary = emit_report(tmp_path)
    assert "Skipping report.json" in caplog.text
    assert all(source != "report.json" for source, _, _ in summary.rows)
    assert len(summary.plots) == 3


def test_sparsity_rows(tmp_path):
    (tmp_path / "sparsity.json").write_text(json.dumps({"synthetic": {"pillar_count_mean": 12.5, "ratio": 0.125}}), encoding="utf-8")
    summary = emit_report(tmp_path)
    assert ("sparsity.json", "pillar_count_mean", "12.5") in summary.rows
    assert summary.plots == []

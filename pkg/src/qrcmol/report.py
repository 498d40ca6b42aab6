"""Rendering of evaluation and classification reports.

Reads the delimited report files from a run directory and writes matplotlib
figures next to them: test-MSE-vs-subsample-size curves with error bars for
the evaluation report, and grouped metric bars for the classification task.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_report_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            row["subsample_size"] = int(row["subsample_size"])
            row["n_subsamples"] = int(row["n_subsamples"])
            row["mse_mean"] = float(row["mse_mean"])
            row["mse_std"] = float(row["mse_std"])
            row["per_subsample_mses"] = [
                float(v) for v in row["per_subsample_mses"].split("|") if v
            ]
            rows.append(row)
    return rows


def read_table1_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            row["subsample_size"] = int(row["subsample_size"])
            row["mean"] = float(row["mean"])
            row["std"] = float(row["std"])
            rows.append(row)
    return rows


def render_evaluation_figure(rows: list[dict], path) -> None:
    """MSE vs subsample size, one errorbar series per (mode, model)."""
    fig, ax = plt.subplots(figsize=(7, 5))
    series = sorted({(r["mode"], r["model"]) for r in rows})
    for mode, model in series:
        pts = sorted(
            (r for r in rows if r["mode"] == mode and r["model"] == model),
            key=lambda r: r["subsample_size"],
        )
        sizes = [r["subsample_size"] for r in pts]
        means = [r["mse_mean"] for r in pts]
        stds = [r["mse_std"] for r in pts]
        ax.errorbar(sizes, means, yerr=stds, marker="o", capsize=3, label=f"{mode} / {model}")
    ax.set_xlabel("subsample size (records)")
    ax.set_ylabel("test MSE")
    ax.set_title("Model performance vs training subsample size")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_table1_figure(rows: list[dict], path) -> None:
    """Grouped bars with error bars: metric means per mode and size."""
    metrics = ("accuracy", "precision", "recall", "f1")
    sizes = sorted({r["subsample_size"] for r in rows})
    modes = sorted({r["mode"] for r in rows})
    fig, axes = plt.subplots(1, len(sizes), figsize=(4 * len(sizes), 4), squeeze=False)
    width = 0.8 / max(len(modes), 1)
    for col, size in enumerate(sizes):
        ax = axes[0][col]
        for m_idx, mode in enumerate(modes):
            means, stds = [], []
            for metric in metrics:
                match = [r for r in rows
                         if r["mode"] == mode and r["metric"] == metric
                         and r["subsample_size"] == size]
                means.append(match[0]["mean"] if match else 0.0)
                stds.append(match[0]["std"] if match else 0.0)
            xs = [i + m_idx * width for i in range(len(metrics))]
            ax.bar(xs, means, width=width, yerr=stds, capsize=3, label=mode)
        ax.set_xticks([i + width * (len(modes) - 1) / 2 for i in range(len(metrics))])
        ax.set_xticklabels(metrics, fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{size} records")
    axes[0][0].set_ylabel("score")
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_run(run_dir) -> list[Path]:
    """Render every available report in a run directory; returns file paths."""
    run_dir = Path(run_dir)
    written: list[Path] = []
    figures = run_dir / "figures"
    eval_csv = run_dir / "report.csv"
    table1_csv = run_dir / "table1.csv"
    if eval_csv.exists():
        figures.mkdir(exist_ok=True)
        target = figures / "mse_vs_size.png"
        render_evaluation_figure(read_report_csv(eval_csv), target)
        written.append(target)
    if table1_csv.exists():
        figures.mkdir(exist_ok=True)
        target = figures / "classification_metrics.png"
        render_table1_figure(read_table1_csv(table1_csv), target)
        written.append(target)
    return written

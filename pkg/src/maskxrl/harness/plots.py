"""SVG plots of training curves and sweep tables, each with the CSV it was drawn from."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..metrics import read_metrics  # noqa: E402

CURVES = [("final_avg_reward", "final average reward"), ("kl_divergence", "KL(pi || masked pi)"),
          ("fidelity", "inter-agent fidelity"), ("reward_drop_fraction", "reward drop (fraction)")]


def plot_curves(run_dir):
    """Metric-vs-iteration curves for one run; returns ``[svg_path, csv_path]``."""
    run_dir = Path(run_dir)
    rows = read_metrics(run_dir)
    if not rows:
        raise ValueError(f"{run_dir} has an empty metrics.jsonl")
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    csv_path = out / "curves.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration"] + [k for k, _ in CURVES])
        for r in rows:
            w.writerow([r["iteration"]] + [repr(float(r[k])) for k, _ in CURVES])
    fig, axes = plt.subplots(1, len(CURVES), figsize=(4 * len(CURVES), 3.2))
    its = [r["iteration"] for r in rows]
    for ax, (key, title) in zip(axes, CURVES):
        ax.plot(its, [r[key] for r in rows], marker="o", ms=3)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("iteration")
    fig.tight_layout()
    svg_path = out / "curves.svg"
    fig.savefig(svg_path)
    plt.close(fig)
    return [svg_path, csv_path]


def read_sweep_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_sweep(csv_path):
    """Bar chart (mean with std error bars) of each metric per sweep row."""
    csv_path = Path(csv_path)
    rows = read_sweep_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    labels = [r["label"] for r in rows]
    keys = [k[:-5] for k in rows[0] if k.endswith("_mean") and k[:-5] + "_std" in rows[0]]
    fig, axes = plt.subplots(1, len(keys), figsize=(3.6 * len(keys), 3.2))
    for ax, key in zip(axes, keys):
        means = [float(r[key + "_mean"]) for r in rows]
        stds = [float(r[key + "_std"]) for r in rows]
        ax.bar(labels, means, yerr=stds, capsize=3, color="0.6", edgecolor="0.2")
        ax.set_title(key, fontsize=9)
        ax.tick_params(axis="x", labelsize=8)
    fig.tight_layout()
    svg_path = csv_path.with_suffix(".svg")
    fig.savefig(svg_path)
    plt.close(fig)
    return [svg_path, csv_path]


def emit_plots(run_dir):
    """Plot whatever ``run_dir`` holds: a training run, a sweep directory, or both."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    written = []
    if (run_dir / "metrics.jsonl").exists():
        written += plot_curves(run_dir)
    for name in ("tau_sweep.csv", "ablations.csv"):
        if (run_dir / name).exists():
            written += plot_sweep(run_dir / name)
    if not written:
        raise FileNotFoundError(f"no metrics.jsonl or sweep CSV in {run_dir}")
    return written

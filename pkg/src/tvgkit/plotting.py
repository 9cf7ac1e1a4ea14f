"""Report figures. Everything renders to PNG files through the Agg backend."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "tvgkit",
}
COLORS = {"flawed": "#b0b0b0", "true": "#2b6cb0", "spatial": "#dd8452", "semantic": "#4c72b0"}


@contextmanager
def style():
    with plt.rc_context(STYLE):
        yield


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp or version metadata so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def _bars(ax, labels, series: dict, colors: dict, hatches: dict | None = None):
    x = np.arange(len(labels))
    width = 0.8 / max(len(series), 1)
    for i, (name, values) in enumerate(series.items()):
        ax.bar(x + (i - (len(series) - 1) / 2) * width, values, width, label=name,
               color=colors.get(name), hatch=(hatches or {}).get(name), edgecolor="black", linewidth=0.4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.legend(frameon=False)


def plot_bench(results: dict, out_dir) -> dict[str, Path]:
    means = results["means"]
    sets = [("acc_test_id", "ID"), ("acc_tvg_id", "TVG-ID"), ("acc_test_ood", "OOD"), ("acc_tvg_ood", "TVG-OOD")]
    flawed = [100 * (means["flawed_attalign"][k] - means["flawed_baseline"][k]) for k, _ in sets]
    true = [100 * (means["true_attalign"][k] - means["true_baseline"][k]) for k, _ in sets]
    paths = {}
    with style():
        fig, ax = plt.subplots()
        _bars(ax, [lbl for _, lbl in sets], {"DET + spatial (flawed)": flawed, "INF + semantic (true)": true},
              {"DET + spatial (flawed)": COLORS["flawed"], "INF + semantic (true)": COLORS["true"]})
        ax.axhline(0, color="black", linewidth=0.6)
        ax.set_ylabel("accuracy gain from AttAlign (points)")
        ax.set_title(f"AttAlign vs. matching baseline, {len(results['seeds'])} seeds")
        paths["gains_figure"] = _save(fig, Path(out_dir) / "attalign_gains.png")

        fig, ax = plt.subplots()
        runs = list(means)
        series = {
            m: [100 * means[r][f"fpvg_{m}_tvg_ood"] for r in runs] for m in ("spatial", "semantic")
        }
        _bars(ax, [r.replace("_", "\n") for r in runs], series, COLORS)
        ax.set_ylabel("FPVG+ on TVG-OOD (%)")
        ax.set_ylim(0, 100)
        paths["fpvg_figure"] = _save(fig, Path(out_dir) / "fpvg_tvg_ood.png")
    return paths


def plot_split_report(report, path) -> Path:
    names = list(report.splits)
    with style():
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax1.bar(names, [100 * report.splits[n].tvg_fraction for n in names], color=COLORS["true"])
        ax1.set_ylabel("questions with complete relevant content (%)")
        ax1.set_ylim(0, 100)
        _bars(ax2, names, {
            "spatial": [report.splits[n].mean_spatial_cues for n in names],
            "semantic": [report.splits[n].mean_semantic_cues for n in names],
        }, COLORS)
        ax2.set_ylabel(f"mean cue objects (IoU > {report.threshold:g})")
        fig.tight_layout()
        return _save(fig, path)


def plot_training_log(rows: list[dict], path, title: str | None = None) -> Path:
    epochs = [r["epoch"] for r in rows]
    with style():
        fig, ax = plt.subplots()
        ax.plot(epochs, [r["train_loss"] for r in rows], color="black", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, [100 * r["dev_acc"] for r in rows], color=COLORS["true"], label="dev accuracy")
        ax2.set_ylabel("dev accuracy (%)")
        ax2.grid(False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_fpvg_summary(summary: list[dict], path) -> Path:
    splits = [s["split"] for s in summary]
    with style():
        fig, ax = plt.subplots()
        _bars(ax, splits, {
            "FPVG+": [100 * s["fpvg_plus"] for s in summary],
            "FPVG+ (correct)": [100 * s["fpvg_plus_correct"] for s in summary],
        }, {"FPVG+": COLORS["semantic"], "FPVG+ (correct)": COLORS["spatial"]})
        ax.set_ylim(0, 100)
        ax.set_ylabel(f"well-grounded questions (%), {summary[0]['matching'] if summary else ''} matching")
        return _save(fig, path)

"""Figures for the CLI report paths. matplotlib is imported on first use."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"font.size": 9, "axes.titlesize": 10, "savefig.dpi": 120})
    return plt


def _save(fig, out_dir, name) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.png"
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    fig.clf()
    return path


def plot_dataset_summary(summary, hist, heatmaps, out_dir) -> List[Path]:
    plt = _plt()
    paths = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    bgs = [b.value for b in summary.per_background]
    bottom = [0] * len(bgs)
    for status in ("empty", "countable", "uncountable"):
        vals = [v[status] for v in summary.per_background.values()]
        ax.bar(bgs, vals, bottom=bottom, label=status)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("samples")
    ax.legend()
    ax.set_title("Samples per background")
    fig.tight_layout()
    paths.append(_save(fig, out_dir, "backgrounds"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [c.value for c in summary.per_class_instances]
    ax.bar(names, list(summary.per_class_instances.values()), color="tab:green")
    ax.set_ylabel("instances")
    ax.tick_params(axis="x", rotation=30)
    ax.set_title("Instances per class")
    fig.tight_layout()
    paths.append(_save(fig, out_dir, "class_instances"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    sb = summary.size_buckets.to_dict()
    ax.bar(["<128", "128-512", ">512"], list(sb.values()), color="tab:orange")
    ax.set_xlabel("sqrt(box area) [px]")
    ax.set_ylabel("boxes")
    fig.tight_layout()
    paths.append(_save(fig, out_dir, "size_buckets"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    if hist.buckets:
        edges = sorted(hist.buckets)
        ax.bar(edges, [hist.buckets[e] for e in edges], width=hist.bucket_width, align="edge", edgecolor="k")
        if hist.q1 is not None:
            ax.axvspan(hist.q1, hist.q3, color="grey", alpha=0.2, label=f"IQR [{hist.q1:g}, {hist.q3:g}]")
            ax.legend()
    ax.set_xlabel("colonies per image")
    ax.set_ylabel("samples")
    fig.tight_layout()
    paths.append(_save(fig, out_dir, "count_histogram"))
    plt.close(fig)

    for hm in heatmaps:
        fig, ax = plt.subplots(figsize=(3.5, 3.5))
        ax.imshow(hm.grid, cmap="inferno", vmin=0.0, vmax=1.0, origin="upper")
        ax.set_title(hm.cls.value)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.tight_layout()
        paths.append(_save(fig, out_dir, f"heatmap_{hm.cls.name}"))
        plt.close(fig)
    return paths


def plot_pr_curves(report, out_dir, iou_thresholds: Sequence[float] = (0.5, 0.75)) -> List[Path]:
    plt = _plt()
    paths = []
    for t in iou_thresholds:
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for (cls, thr), curve in sorted(report.curves.items(), key=lambda kv: kv[0][0].value):
            if abs(thr - t) > 1e-9:
                continue
            pts = sorted(curve, key=lambda p: (p.recall, -p.precision))
            ax.plot([p.recall for p in pts], [p.precision for p in pts], label=cls.value)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"PR @ IoU {t:.2f}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        paths.append(_save(fig, out_dir, f"pr_iou{int(round(t * 100))}"))
        plt.close(fig)
    return paths


def plot_counts(truth: Sequence[int], pred: Sequence[int], out_dir) -> List[Path]:
    """Predicted vs. true counts with the identity line and a 10% band."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    top = max([1] + list(truth) + list(pred)) * 1.05
    ax.plot([0, top], [0, top], "k-", lw=1)
    ax.plot([0, top], [0, 1.1 * top], "b--", lw=0.8)
    ax.plot([0, top], [0, 0.9 * top], "b--", lw=0.8)
    ax.scatter(truth, pred, s=8, alpha=0.7)
    ax.set_xlim(0, top)
    ax.set_ylim(0, top)
    ax.set_xlabel("ground truth count")
    ax.set_ylabel("predicted count")
    fig.tight_layout()
    path = _save(fig, out_dir, "counts")
    plt.close(fig)
    return [path]

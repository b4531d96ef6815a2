"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "proxyvqa",
})

# fixed metadata keeps reruns byte-identical
_META = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}}


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".").lower() or "png"
    fig.savefig(path, format=fmt, metadata=_META.get(fmt), bbox_inches="tight")
    plt.close(fig)
    return path


def _col(rows, key):
    return np.array([float(r[key]) if r.get(key, "") != "" else np.nan for r in rows])


def plot_training(rows, tasks, path) -> Path:
    step = _col(rows, "step")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for t in tasks:
        ax1.plot(step, _col(rows, f"loss_{t}"), lw=0.8, label=t)
    ax1.plot(step, _col(rows, "joint_loss"), color="k", lw=1.2, label="joint")
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.set_ylabel("Smooth-L1 loss")
    ax1.legend(fontsize=7)
    alphas = np.vstack([_col(rows, f"alpha_{t}") for t in tasks])
    ax2.stackplot(step, np.nan_to_num(alphas), labels=tasks, alpha=0.8)
    ax2.set_ylim(0, 1)
    ax2.set_xlabel("step")
    ax2.set_ylabel("task weight")
    ax2.legend(fontsize=7, loc="upper right")
    return save(fig, path)


def plot_scatter(pred, labels, mapping, path, title=None) -> Path:
    pred = np.asarray(pred, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.scatter(pred, labels, s=12, alpha=0.7)
    if mapping is not None and np.ptp(pred) > 0:
        xs = np.linspace(pred.min(), pred.max(), 200)
        ax.plot(xs, mapping(xs), color="C3", lw=1.2, label=f"{mapping.method} fit")
        ax.legend(fontsize=7)
    ax.set_xlabel("prediction")
    ax.set_ylabel("label")
    if title:
        ax.set_title(title)
    return save(fig, path)


def plot_fewshot(summary_rows, path) -> Path:
    ks = _col(summary_rows, "K")
    order = np.argsort(ks)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for m in ("srcc", "plcc"):
        ax.plot(ks[order], _col(summary_rows, m)[order], marker="o", label=m.upper())
    ax.set_xlabel("labelled clips K")
    ax.set_ylabel("median correlation")
    ax.legend(fontsize=7)
    return save(fig, path)


def plot_runs(run_rows, path) -> Path:
    metrics = ("srcc", "krcc", "plcc")
    data = [v[np.isfinite(v)] for v in (_col(run_rows, m) for m in metrics)]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(metrics) + 1), [m.upper() for m in metrics])
    ax.set_ylabel("per-run value")
    return save(fig, path)


def plot_ablation(rows, path) -> Path:
    metrics = ("srcc", "krcc", "plcc")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    width = 0.8 / max(len(rows), 1)
    x = np.arange(len(metrics))
    for i, r in enumerate(rows):
        ax.bar(x + i * width, [float(r[m]) if r[m] != "" else 0.0 for m in metrics], width, label=r["method"])
    ax.set_xticks(x + width * (len(rows) - 1) / 2, [m.upper() for m in metrics])
    ax.set_ylabel("median over splits")
    ax.legend(fontsize=7)
    return save(fig, path)

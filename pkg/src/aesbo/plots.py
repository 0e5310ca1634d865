"""PNG figures for experiment outputs.

matplotlib is imported on first use so the numerical modules never depend
on it.  Every function takes the same rows that are written to CSV and saves
one figure to ``path``.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    fig.clf()


def regret_curves(rows, path, title: str = "") -> None:
    """Mean log10 regret with ±2 standard-error bands, one line per (method, S)."""
    plt = _pyplot()
    groups = defaultdict(list)
    for r in rows:
        groups[(r["method"], r["num_samples"])].append(r)
    several_s = len({k[1] for k in groups}) > 1
    fig, ax = plt.subplots(figsize=(6, 4))
    for (method, S), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        rs.sort(key=lambda r: r["iteration"])
        t = np.array([r["iteration"] for r in rs]) + 1
        m = np.array([r["mean_regret"] for r in rs])
        se = np.array([r["stderr"] for r in rs])
        label = f"{method} (S={S})" if several_s else method
        line, = ax.plot(t, m, label=label)
        ax.fill_between(t, m - 2 * se, m + 2 * se, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("log10 relative regret")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)


def landscape_counts(rows, path) -> None:
    """Histogram of local-maxima counts per method."""
    plt = _pyplot()
    groups = defaultdict(list)
    for r in rows:
        groups[r["method"]].append(r["count"])
    fig, ax = plt.subplots(figsize=(6, 4))
    hi = max(max(v) for v in groups.values())
    bins = np.arange(-0.5, hi + 1.5)
    for method, counts in sorted(groups.items()):
        ax.hist(counts, bins=bins, alpha=0.5, label=f"{method} (mean {np.mean(counts):.2f})")
    ax.set_xlabel("local maxima")
    ax.set_ylabel("repetitions")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)


def landscape_example(grid, values_per_method, train_x, path) -> None:
    """Acquisition landscapes of one repetition, each scaled to a maximum of 1."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for method, v in values_per_method.items():
        v = np.asarray(v)
        ax.plot(grid, v / v.max() if v.max() > 0 else v, label=method, lw=1)
    for x in np.ravel(train_x):
        ax.axvline(x, color="0.6", lw=0.6, ls=":")
    ax.set_xlabel("x")
    ax.set_ylabel("scaled acquisition")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)


def oracle_curves(rows, path) -> None:
    """Approximate and oracle curves, one panel per label."""
    plt = _pyplot()
    groups = defaultdict(list)
    for r in rows:
        groups[r["label"]].append(r)
    n = len(groups)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), sharex=True, squeeze=False)
    for ax, (label, rs) in zip(axes[:, 0], groups.items()):
        x = [r["x"] for r in rs]
        ax.plot(x, [r["oracle"] for r in rs], label="oracle", color="k", lw=1.2)
        ax.plot(x, [r["approximate"] for r in rs], label="approximation", color="C1", lw=1.2, ls="--")
        ax.set_ylabel(label)
    axes[0, 0].legend(frameon=False)
    axes[-1, 0].set_xlabel("x")
    _save(fig, path)
    plt.close(fig)

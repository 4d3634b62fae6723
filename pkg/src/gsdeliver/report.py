"""Figures for simulation outputs (timelines, bandwidth, pose error)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sim import POSE_FIELDS, SlotMetrics  # noqa: E402

# fixed metadata keeps reruns byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_utility(runs: Mapping[str, Sequence[SlotMetrics]], path) -> Path:
    """Achieved utility per slot, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, m in runs.items():
        ax.plot([x.slot for x in m], [x.utility for x in m], label=label, lw=1.2)
    ax.set_xlabel("slot")
    ax.set_ylabel("utility")
    if runs:
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_bandwidth(m: Sequence[SlotMetrics], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    t = [x.slot for x in m]
    ax.plot(t, [x.actual_mbps for x in m], label="actual", lw=1.2)
    ax.plot(t, [x.pred_mbps for x in m], label="predicted", lw=1.0, ls="--")
    ax.set_xlabel("slot")
    ax.set_ylabel("Mbps")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_pose_error(m: Sequence[SlotMetrics], path) -> Path:
    """Absolute prediction error per pose feature, positions and angles on separate axes."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(7, 3))
    t = [x.slot for x in m]
    for i, name in enumerate(POSE_FIELDS):
        ax = a if i < 3 else b
        ax.plot(t, [x.pose_mae[i] for x in m], label=name, lw=1.0)
    a.set_ylabel("abs error (m)")
    b.set_ylabel("abs error (deg)")
    for ax in (a, b):
        ax.set_xlabel("slot")
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_summary(rows: Sequence[Mapping], path) -> Path:
    """Mean utility per scheduler, averaged over traces and offsets."""
    means: dict[str, list[float]] = {}
    for r in rows:
        means.setdefault(str(r["scheduler"]), []).append(float(r["mean_utility"]))
    names = list(means)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(range(len(names)), [sum(v) / len(v) for v in means.values()], color="0.4")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("mean utility")
    fig.tight_layout()
    return _save(fig, path)

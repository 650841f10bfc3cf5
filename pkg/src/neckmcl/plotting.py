"""Report figures rendered to PNG files with the non-interactive Agg backend.

PNG metadata is stripped so repeated runs write byte-identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .kinematics import MODEL_RATE, PITCH_RANGE, YAW_RANGE  # noqa: E402
from .metrics import anchor_label  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
COLORS = {"max": "#c0392b", "rnd": "#7f8c8d", "min": "#2471a3", "measured": "black", "predicted": "#d35400"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_anchor_errors(report, path) -> Path:
    """Per-anchor NRMSE and NMAE bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 3.0))
        labels = [anchor_label(r.anchor) for r in report.rows]
        x = np.arange(len(labels))
        ax.bar(x - 0.2, [r.nrmse for r in report.rows], 0.4, label="NRMSE", color="#34495e")
        ax.bar(x + 0.2, [r.nmae for r in report.rows], 0.4, label="NMAE", color="#95a5a6")
        ax.set_xticks(x, labels, rotation=60, ha="right")
        ax.set_ylabel("error (% of range)")
        ax.set_title(f"{report.mode} error per anchor (pitch_yaw)")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_scatter(report, path, max_points: int = 4000) -> Path:
    """Predicted against measured MCL over every evaluated sample."""
    m, p = report.measured, report.predicted
    step = max(1, m.size // max_points)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.4))
        ax.scatter(m[::step], p[::step], s=3, alpha=0.4, color="#34495e", linewidths=0)
        lo = float(min(m.min(), p.min()))
        hi = float(max(m.max(), p.max()))
        ax.plot([lo, hi], [lo, hi], color="#c0392b", lw=0.8)
        ax.set_xlabel("measured MCL")
        ax.set_ylabel("predicted MCL")
        ax.set_title(f"{report.mode}: r = {report.pooled_pearson:.3f}")
        fig.tight_layout()
        return _save(fig, path)


def plot_examples(report, path, count: int = 4) -> Path:
    """Measured and predicted MCL over the first session of a few anchors."""
    anchors = list(report.examples)[:count]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(anchors), 1, figsize=(6.0, 1.6 * len(anchors)), sharex=True, squeeze=False)
        for ax, anchor in zip(axes[:, 0], anchors):
            m, p = report.examples[anchor]
            t = np.arange(m.size) / MODEL_RATE
            ax.plot(t, m, color=COLORS["measured"], lw=1.0, label="measured")
            ax.plot(t, p, color=COLORS["predicted"], lw=1.0, label="predicted")
            ax.set_ylabel("MCL")
            ax.set_title(f"anchor {anchor_label(anchor)}", loc="left")
        axes[0, 0].legend(frameon=False, loc="upper right")
        axes[-1, 0].set_xlabel("time (s)")
        fig.tight_layout()
        return _save(fig, path)


def plot_stationary_map(pitch, yaw, values, path, title: str = "stationary MCL") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        im = ax.imshow(values, origin="lower", cmap="magma", aspect="auto",
                       extent=(yaw[0] - 5, yaw[-1] + 5, pitch[0] - 5, pitch[-1] + 5))
        fig.colorbar(im, ax=ax, label="MCL")
        ax.set_xlabel("yaw (deg)")
        ax.set_ylabel("pitch (deg)")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_scanpaths(paths: dict, path) -> Path:
    """Scan paths of several conditions drawn in the study field."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(paths), figsize=(3.2 * len(paths), 2.4), squeeze=False)
        for ax, (cond, sp) in zip(axes[0], paths.items()):
            ax.plot(sp.poses[:, 1], sp.poses[:, 0], "-o", ms=2.5, lw=0.8, color=COLORS.get(cond, "black"))
            ax.plot(sp.poses[0, 1], sp.poses[0, 0], "s", color="black", ms=4)
            ax.set_xlim(*YAW_RANGE)
            ax.set_ylim(*PITCH_RANGE)
            ax.set_xticks(np.arange(YAW_RANGE[0], YAW_RANGE[1] + 1, 10), minor=True)
            ax.set_yticks(np.arange(PITCH_RANGE[0], PITCH_RANGE[1] + 1, 10), minor=True)
            ax.grid(which="minor", lw=0.3, color="#dddddd")
            ax.set_aspect("equal")
            ax.set_xlabel("yaw (deg)")
            ax.set_title(f"{cond.upper()}: H_c = {sp.total_hc:.2f}")
        axes[0, 0].set_ylabel("pitch (deg)")
        fig.tight_layout()
        return _save(fig, path)


def plot_velocity_errors(report, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        keys = list(report.velocity_nrmse)
        ax.boxplot([report.velocity_nrmse[k] for k in keys], tick_labels=keys)
        ax.set_ylabel("velocity NRMSE (%)")
        ax.set_title("synthesized vs measured velocity")
        fig.tight_layout()
        return _save(fig, path)


def plot_history(history, path, title: str = "training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        ax.semilogy(np.arange(1, len(history) + 1), history, "-o", ms=3, color="#34495e")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean L2 loss")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)

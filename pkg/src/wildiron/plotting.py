"""Matplotlib figures for stage snapshots, wrinkleness curves and benchmarks."""

from __future__ import annotations

import os
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _masked(values, mask):
    out = np.array(values, dtype=np.float64)
    out[~np.asarray(mask, bool)] = np.nan
    return out


def plot_stages(description, path: str | os.PathLike, title: Optional[str] = None) -> None:
    """Descriptor image, wrinkle regions, skeleton and ironing path side by side."""
    plan = description.plan
    img = description.grid.filled(plan.closed_mask).values
    fig, axes = plt.subplots(1, 4, figsize=(16, 4.2))
    ax = axes[0]
    im = ax.imshow(_masked(img, plan.closed_mask), origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title(f"{description.field.name} image")

    ax = axes[1]
    shown = np.zeros(plan.wrinkles.shape)
    shown[plan.closed_mask] = 0.2
    shown[plan.wrinkles] = 0.6
    if plan.region is not None:
        shown[plan.region] = 1.0
    ax.imshow(shown, origin="lower", cmap="gray", vmin=0, vmax=1)
    ax.set_title("wrinkle regions (selected bright)")

    ax = axes[2]
    ax.imshow(plan.region if plan.region is not None else np.zeros_like(plan.wrinkles), origin="lower", cmap="gray")
    if plan.skeleton is not None:
        r, c = np.nonzero(plan.skeleton)
        ax.plot(c, r, "r.", ms=1.5)
    ax.set_title("skeleton")

    ax = axes[3]
    ax.imshow(_masked(img, plan.closed_mask), origin="lower", cmap="gray")
    if plan.pixel_path:
        p = np.asarray(plan.pixel_path)
        ax.plot(p[:, 1], p[:, 0], "r-", lw=1.5)
        wp = np.asarray(plan.path.pixels)
        ax.plot(wp[:, 1], wp[:, 0], "yo", ms=3)
        ax.plot(p[0, 1], p[0, 0], "g^", ms=8, label="start")
        ax.plot(p[-1, 1], p[-1, 0], "bs", ms=7, label="end")
        ax.legend(loc="upper right", fontsize=7)
    ax.set_title("ironing path")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_wrinkleness(curves: Mapping[str, Sequence[float]], path: str | os.PathLike) -> None:
    """Wrinkleness against iteration, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in curves.items():
        ax.plot(np.arange(len(ys)), ys, "o-", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("wrinkleness")
    ax.set_ylim(bottom=0)
    ax.xaxis.set_major_locator(matplotlib.ticker.MaxNLocator(integer=True))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_benchmark(report, path: str | os.PathLike) -> None:
    """Per-trial JSI and descriptor time bars for each descriptor."""
    trials = report.ok_trials()
    names = list(report.descriptors)
    x = np.arange(len(trials))
    width = 0.8 / max(1, len(names))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(12, 4))
    for i, d in enumerate(names):
        a1.bar(x + i * width, [100 * t.jsi[d] for t in trials], width, label=d)
        a2.bar(x + i * width, [t.time_s[d] for t in trials], width, label=d)
    for ax, ylabel in ((a1, "JSI (%)"), (a2, "time (s)")):
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels([str(t.trial) for t in trials])
        ax.set_xlabel("trial")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_trajectory(log, cloth, path: str | os.PathLike, desired_fz: float = -200.0) -> None:
    """Planar track over the cloth heights and the vertical force trace."""
    pos = log.position_array()
    f = log.force_array()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(11, 4))
    (x0, x1), (y0, y1) = cloth.bounds()
    im = a1.imshow(cloth.heights * 1e3, origin="lower", extent=(x0, x1, y0, y1), cmap="magma")
    fig.colorbar(im, ax=a1, fraction=0.046, label="height (mm)")
    if len(pos):
        a1.plot(pos[:, 0], pos[:, 1], "c-", lw=1)
    a1.set_title("iron track")
    a2.plot(f[:, 2] if len(f) else [], lw=1)
    a2.axhline(desired_fz, color="k", ls="--", lw=0.8)
    a2.set_xlabel("step")
    a2.set_ylabel("f_z (IU)")
    a2.set_title("vertical force")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)

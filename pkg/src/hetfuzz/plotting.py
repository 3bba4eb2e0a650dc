"""Figures written next to bug directories and ablation tables."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_thermo_pair(res, path, metadata: Optional[dict] = None) -> Path:
    """Host and device thermo columns of one finding, one panel per column."""
    a, b = res.reports
    cols = [c for c in a.columns if c in b.columns and c != "step"]
    n = max(len(cols), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.8 * n + 0.6), sharex=True, squeeze=False)
    for ax, col in zip(axes[:, 0], cols):
        for rep, style in ((a, "-o"), (b, "--x")):
            steps = [row["step"] for row in rep.thermo]
            ax.plot(steps, [row[col] for row in rep.thermo], style, ms=3, label=rep.backend)
        mark = " (diverges)" if col in res.diverging_columns else ""
        ax.set_ylabel(col + mark, fontsize=8)
        ax.tick_params(labelsize=7)
    axes[0, 0].legend(fontsize=7)
    axes[-1, 0].set_xlabel("step")
    fig.suptitle(res.verdict, fontsize=9)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=100, metadata=_png_text(metadata))
    plt.close(fig)
    return out


def plot_ablation(summaries: Sequence[dict], path, metadata: Optional[dict] = None) -> Path:
    """Bar chart of valid/invalid counts, LC%, UBC and BP per mode."""
    metrics = (("valid", "valid"), ("invalid", "invalid"), ("LC_percent", "LC %"), ("UBC", "UBC"), ("BP", "BP"))
    fig, axes = plt.subplots(1, len(metrics), figsize=(2.4 * len(metrics), 3))
    modes = [s["mode"] for s in summaries]
    for ax, (key, label) in zip(axes, metrics):
        values = [len(s[key]) if key == "BP" else s[key] for s in summaries]
        ax.bar(range(len(modes)), values, color=["C0", "C1", "C2", "C3"][: len(modes)])
        ax.set_xticks(range(len(modes)))
        ax.set_xticklabels([m.replace("_", "\n") for m in modes], fontsize=7)
        ax.set_title(label, fontsize=9)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=100, metadata=_png_text(metadata))
    plt.close(fig)
    return out


def _png_text(metadata: Optional[dict]) -> dict:
    # PNG text chunks; the rng seed and config digest travel with the image
    return {"Description": " ".join(f"{k}={v}" for k, v in sorted((metadata or {}).items()))}

"""Figures for sweep summaries (non-interactive backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_sweep(agg: dict, path, input_ref: dict | None = None) -> Path:
    """SI-SDR against step count, one panel per SNR bin, one line per sampler mode."""
    labels = [k for k in agg if k != "all"] + (["all"] if "all" in agg else [])
    fig, axes = plt.subplots(1, len(labels), figsize=(3.2 * len(labels), 3.0), squeeze=False, sharey=True)
    for ax, label in zip(axes[0], labels):
        for mode, cells in sorted(agg[label].items()):
            steps = sorted(cells, key=int)
            ax.plot([int(s) for s in steps], [cells[s]["si_sdr_db"] for s in steps], marker="o", label=mode)
        if input_ref and label in input_ref:
            ax.axhline(input_ref[label], color="gray", linestyle="--", label="input")
        ax.set_xscale("log", base=2)
        ax.set_title(f"SNR {label}", fontsize=9)
        ax.set_xlabel("steps")
    axes[0][0].set_ylabel("SI-SDR (dB)")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path

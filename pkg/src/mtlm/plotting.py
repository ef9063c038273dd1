"""Matplotlib figures written next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "svg.hashsalt": "mtlm",
}


def _save(fig, path):
    # no Software/date metadata so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def plot_beam_sweep(rows, path, title="WER by beam size"):
    """``rows`` are (beam, system, wer_pct) tuples; one line per system."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        systems = list(dict.fromkeys(r[1] for r in rows))
        for s in systems:
            pts = sorted((r[0], r[2]) for r in rows if r[1] == s)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=s)
        beams = sorted({r[0] for r in rows})
        ax.set_xscale("log", base=2)
        ax.set_xticks(beams)
        ax.set_xticklabels([str(b) for b in beams])
        ax.set_xlabel("beam size")
        ax.set_ylabel("WER (%)")
        ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_error_types(report, path):
    """Grouped bars of deletions / insertions / substitutions per length bucket and system."""
    kinds = ("deletions", "insertions", "substitutions")
    buckets = ("S", "M", "L")
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(8.0, 2.8), sharey=True)
        n_sys = max(1, len(report.systems))
        width = 0.8 / n_sys
        x = np.arange(len(kinds))
        for ax, b in zip(axes, buckets):
            for k, s in enumerate(report.systems):
                c = next(v for key, v in s.buckets.items() if key.value == b)
                ax.bar(x + k * width, [getattr(c, kind) for kind in kinds], width, label=s.label)
            ax.set_xticks(x + width * (n_sys - 1) / 2)
            ax.set_xticklabels(["D", "I", "S"])
            ax.set_title(f"length {b}")
        axes[0].set_ylabel("errors")
        axes[-1].legend(frameon=False)
        _save(fig, path)


def plot_loss_curve(records, path):
    """``records`` are (step, lr, ulm, umlm, bmlm) tuples from the training log."""
    steps = [r[0] for r in records]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for k, name in ((2, "ULM"), (3, "UMLM"), (4, "BMLM")):
            ax.plot(steps, [r[k] for r in records], label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss per sequence")
        ax.legend(frameon=False)
        _save(fig, path)

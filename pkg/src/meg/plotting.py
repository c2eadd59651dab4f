"""Figures for benchmark reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import KINDS, BenchReport  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

_SERIES = (("mobile_s", "mobile"), ("server_s", "server"), ("client_s", "client"), ("total_s", "aggregate"))


def plot_report(report: BenchReport, path: str | Path) -> Path:
    """Box plot of per-trial component times, one panel per task kind."""
    path = Path(path)
    kinds = [k for k in KINDS if any(t.task_kind == k for t in report.trials)]
    if not kinds:
        raise ValueError("report has no trials to plot")
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(kinds), figsize=(3.4 * len(kinds), 3.0), sharey=True, squeeze=False)
        for ax, kind in zip(axes[0], kinds):
            trials = [t for t in report.trials if t.task_kind == kind]
            data = [[getattr(t, attr) * 1000.0 for t in trials] for attr, _ in _SERIES]
            ax.boxplot(data, tick_labels=[label for _, label in _SERIES], widths=0.55)
            ax.set_title(f"{kind.capitalize()} (n={len(trials)})")
            ax.grid(axis="y", alpha=0.3)
        axes[0][0].set_ylabel("time per trial (ms)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

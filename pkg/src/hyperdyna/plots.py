"""Learning-curve plotting: one SVG per task with both variants overlaid.

SVG output is made byte-deterministic by pinning matplotlib's hash salt and
dropping the creation date from the file metadata, so identical metrics
produce identical images.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import MetricsError
from .metrics import MetricsRow, load_metrics

_VARIANT_STYLE = {"mbrl": "tab:blue", "mfrl": "tab:orange"}


def plot_learning_curves(rows: list[MetricsRow], output_dir) -> list[str]:
    """Write learning_curves_task<N>.svg per task; returns the paths written."""
    if not rows:
        raise MetricsError("no metrics rows to plot")
    os.makedirs(output_dir, exist_ok=True)
    matplotlib.rcParams["svg.hashsalt"] = "hyperdyna"
    written = []
    for task_id in sorted({r.task_id for r in rows}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for variant in sorted({r.variant for r in rows if r.task_id == task_id}):
            series = [(r.episode, r.episodic_return) for r in rows
                      if r.task_id == task_id and r.variant == variant]
            series.sort()
            ax.plot([e for e, _ in series], [v for _, v in series],
                    label=variant.upper(), color=_VARIANT_STYLE.get(variant))
        ax.set_xlabel("episode")
        ax.set_ylabel("episodic return (K h)")
        ax.set_title(f"Task {task_id} learning curves")
        ax.legend()
        ax.grid(True, alpha=0.3)
        path = os.path.join(output_dir, f"learning_curves_task{task_id}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def cli_plot(metrics_path, output_dir) -> list[str]:
    return plot_learning_curves(load_metrics(metrics_path), output_dir)

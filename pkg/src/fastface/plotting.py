"""Figure rendering for report commands.

Figures are written next to the CSV/JSON they illustrate. The data files are
the record of a run; figures are a convenience and can be switched off.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def save(fig, path) -> None:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def histogram_pair(before: dict, after: dict, title: str = ""):
    """Overlay two histograms given as ``{"edges": [...], "counts": [...]}``."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for h, label in ((before, "before"), (after, "after")):
            edges = np.asarray(h["edges"])
            counts = np.asarray(h["counts"], dtype=float)
            ax.stairs(counts / max(counts.sum(), 1), edges, label=label, fill=label == "before", alpha=0.6)
        ax.set_xlabel("attention value")
        ax.set_ylabel("fraction of entries")
        if title:
            ax.set_title(title)
        ax.legend()
    return fig, ax


def sweep_metrics(rows: list, cell_labels: list, metrics=("ID", "CLIP", "AE", "IR")):
    """One panel per metric, cells on the x axis in grid order."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 3.2))
        x = np.arange(len(rows))
        for ax, m in zip(np.atleast_1d(axes), metrics):
            y = [np.nan if r[m] is None else r[m] for r in rows]
            ax.plot(x, y, marker="o")
            ax.set_title(m)
            ax.set_xticks(x)
            ax.set_xticklabels(cell_labels, rotation=45, ha="right", fontsize=7)
        fig.tight_layout()
    return fig, axes


def pareto_scatter(groups: dict, x: str = "ID", y: str = "CLIP"):
    """Scatter every point and connect each group's front members.

    ``groups`` maps a label to ``(points, front)`` lists of ParetoPoint.
    """
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for label, (points, front) in groups.items():
            px = [p.coordinates[x] for p in points]
            py = [p.coordinates[y] for p in points]
            (line,) = ax.plot(px, py, "o", alpha=0.35)
            fr = sorted(front, key=lambda p: p.coordinates[x])
            ax.plot([p.coordinates[x] for p in fr], [p.coordinates[y] for p in fr], "-o",
                    color=line.get_color(), label=label)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        ax.legend(fontsize=7)
    return fig, ax

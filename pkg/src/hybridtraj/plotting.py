"""Static scene renderings for visual debugging.

Color conventions: observed past in blue, ground-truth future in cyan,
predicted samples in red with red dots at mode changes, centerlines in
light grey.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .types import HybridSequence, SceneRecord


def plot_scene(
    record: SceneRecord,
    predictions: Sequence[HybridSequence] = (),
    probabilities: Optional[np.ndarray] = None,
    path: Optional[str] = None,
    title: Optional[str] = None,
):
    fig, ax = plt.subplots(figsize=(7, 6))
    for line in record.centerlines:
        ax.plot(line[:, 0], line[:, 1], color="0.8", linewidth=3, zorder=0)

    ax.plot(record.observed[:, 0], record.observed[:, 1], color="tab:blue", linewidth=2,
            label="observed")
    ax.plot(record.future[:, 0], record.future[:, 1], color="cyan", linewidth=2,
            label="ground truth")

    for i, seq in enumerate(predictions):
        weight = None if probabilities is None else probabilities[i]
        alpha = 0.9 if weight is None else float(0.35 + 0.6 * weight / max(probabilities.max(), 1e-12))
        ax.plot(seq.positions[:, 0], seq.positions[:, 1], color="red", linewidth=1,
                alpha=alpha, label="prediction" if i == 0 else None)
        changes = np.flatnonzero(np.diff(seq.modes) != 0) + 1
        if len(changes):
            ax.scatter(seq.positions[changes, 0], seq.positions[changes, 1], color="red",
                       s=14, zorder=5)

    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        fig.savefig(path, dpi=110)
        plt.close(fig)
        return None
    return fig

"""Learning-curve figures rendered from metrics rows.

Uses ``matplotlib.figure.Figure`` directly so no GUI backend or global pyplot
state is involved; figures go straight to image files.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib.figure import Figure

from .trainer import MetricsRow


def curves_by_game(rows: Sequence[MetricsRow]) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Group rows into (episodes, means, stds) arrays per game, in first-seen order."""
    grouped = defaultdict(list)
    for row in rows:
        grouped[row.game_id].append(row)
    out = {}
    for game_id, group in grouped.items():
        group.sort(key=lambda r: r.episode)
        out[game_id] = (
            np.array([r.episode for r in group]),
            np.array([r.eval_mean for r in group]),
            np.array([r.eval_std for r in group]),
        )
    return out


def plot_learning_curves(rows: Sequence[MetricsRow], path, optima: Optional[Mapping[str, float]] = None,
                         title: Optional[str] = None) -> Figure:
    """Plot mean evaluation reward per game (with a one-std band) and save it to ``path``.

    ``optima`` maps game ids to oracle optimal rewards; each is drawn as a
    dashed horizontal line in its game's colour.
    """
    curves = curves_by_game(rows)
    if not curves:
        raise ValueError("no metrics rows to plot")
    fig = Figure(figsize=(7, 4), dpi=100)
    ax = fig.subplots()
    for i, (game_id, (ep, mean, std)) in enumerate(curves.items()):
        colour = f"C{i % 10}"
        ax.plot(ep, mean, color=colour, lw=1.2, label=game_id)
        if np.any(std > 0):
            ax.fill_between(ep, mean - std, mean + std, color=colour, alpha=0.2, lw=0)
        if optima and game_id in optima:
            ax.axhline(optima[game_id], color=colour, ls="--", lw=0.8)
    ax.set_xlabel("episode")
    ax.set_ylabel("evaluation reward")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize="small")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    return fig

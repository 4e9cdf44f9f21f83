"""Diagnostic figure emission: contour sketches with overlaid curves.

Figures are rendered to SVG next to the delimited output.  They are purely
diagnostic; nothing downstream reads them back.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .func_model import FuncExpr, eval_expr
from .geometry import SampledCurve


def plot_experiment(
    f: FuncExpr,
    n: int,
    region,
    curves: list[tuple[SampledCurve, str]],
    path,
    grid: int = 80,
) -> bool:
    """Level-set contour sketch (2-D) or graph + trajectory (1-D) with the
    given curves overlaid.  Returns False for dimensions it cannot draw."""
    region = np.asarray(region, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    try:
        if n == 2:
            xs = np.linspace(region[0, 0], region[0, 1], grid)
            ys = np.linspace(region[1, 0], region[1, 1], grid)
            Z = np.array([[eval_expr(f, np.array([x, y])) for x in xs] for y in ys])
            cs = ax.contour(xs, ys, Z, levels=20, linewidths=0.6, cmap="viridis")
            ax.clabel(cs, inline=True, fontsize=6)
            for c, label in curves:
                ax.plot(c.points[:, 0], c.points[:, 1], marker=".", markersize=2, label=label)
                ax.plot(*c.points[0], marker="o", markersize=5, color="k")
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        elif n == 1:
            xs = np.linspace(region[0, 0], region[0, 1], grid)
            ax.plot(xs, [eval_expr(f, np.array([x])) for x in xs], color="gray")
            for c, label in curves:
                vals = [eval_expr(f, p) for p in c.points]
                ax.plot(c.points[:, 0], vals, marker=".", markersize=3, label=label)
            ax.set_xlabel("x1")
            ax.set_ylabel("f")
        else:
            return False
        if curves:
            ax.legend(fontsize=7)
        fig.savefig(path, format="svg", bbox_inches="tight")
        return True
    finally:
        plt.close(fig)

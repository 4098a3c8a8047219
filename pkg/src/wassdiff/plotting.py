"""Deterministic figure rendering for study reports.

Figures go to SVG through matplotlib with a pinned hash salt, no embedded
date, and a fixed 800x600 canvas, so identical data produces byte-identical
files across runs and worker counts.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .bounds import fit_rate
from .errors import InvalidInputError

matplotlib.rcParams["svg.hashsalt"] = "wassdiff"


def _slope(xs, ys):
    if len(xs) >= 3:
        return fit_rate(xs, ys).slope
    if len(xs) == 2 and xs[0] != xs[1]:
        return (math.log(ys[1]) - math.log(ys[0])) / (math.log(xs[1]) - math.log(xs[0]))
    return None


def emit_plot(
    series: Sequence[tuple],
    kind: str,
    path: str,
    title: Optional[str] = None,
    xlabel: Optional[str] = None,
    ylabel: Optional[str] = None,
) -> str:
    """Render (x, y, label) series to an SVG file.

    kind "loglog" annotates each legend entry with the fitted log-log slope;
    every value must then be positive.  Returns the path written.
    """
    if kind not in ("loglog", "linear"):
        raise InvalidInputError(f"unknown plot kind {kind!r}")
    if not series:
        raise InvalidInputError("need at least one series")
    fig, ax = plt.subplots(figsize=(8.0, 6.0), dpi=100)
    try:
        for xs, ys, label in series:
            xs = list(map(float, xs))
            ys = list(map(float, ys))
            if kind == "loglog":
                if any(v <= 0 for v in xs) or any(v <= 0 for v in ys):
                    raise InvalidInputError("loglog series must be positive")
                slope = _slope(xs, ys)
                if slope is not None:
                    label = f"{label} (slope {slope:.2f})"
                ax.loglog(xs, ys, marker="o", label=label)
            else:
                ax.plot(xs, ys, marker="o", label=label)
        ax.grid(True, which="both", alpha=0.4)
        if title:
            ax.set_title(title)
        if xlabel:
            ax.set_xlabel(xlabel)
        if ylabel:
            ax.set_ylabel(ylabel)
        ax.legend(loc="best")
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path

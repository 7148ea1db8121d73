import logging
import os
from typing import Literal, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from mesh_sar.exceptions import ValidationError  # noqa: E402

logger = logging.getLogger(__name__)

PlotKind = Literal["line", "bar"]


def plot_metrics(
    frame: pd.DataFrame,
    path: str,
    x: str,
    y: Sequence[str],
    kind: PlotKind = "line",
    group: Optional[str] = None,
    title: Optional[str] = None,
    log_y: bool = False,
    logger: logging.Logger = logger,
) -> str:
    """Renders columns of a metric table to an SVG line or bar chart.

    Args:
        frame: Table read from a metrics CSV (training history, bench rows, ...).
        path: Output ``.svg`` path.
        x: Column for the horizontal axis (or bar labels).
        y: Columns to draw.
        kind: "line" for curves, "bar" for ablation comparisons.
        group: Optional column; one line per distinct value.
        title: Figure title.
        log_y: Logarithmic vertical axis.
        logger: Logger instance for tracking operations.

    Returns:
        str: ``path``

    Raises:
        ValidationError: unknown columns or plot kind.
    """
    missing = [c for c in [x, *y, *([group] if group else [])] if c not in frame.columns]
    if missing:
        msg = f"Columns {missing} not in table (have {list(frame.columns)})"
        logger.error(msg)
        raise ValidationError(msg)
    if kind not in ("line", "bar"):
        raise ValidationError(f"Unknown plot kind: {kind}")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    if kind == "bar":
        frame.plot.bar(x=x, y=list(y), ax=ax, rot=30)
    elif group:
        for value, part in frame.groupby(group):
            for column in y:
                ax.plot(part[x], part[column], marker="o", label=f"{column} ({group}={value})")
        ax.legend()
    else:
        for column in y:
            ax.plot(frame[x], frame[column], marker="o", label=column)
        ax.legend()

    ax.set_xlabel(x)
    ax.set_ylabel(", ".join(y))
    if log_y:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.grid(True, linestyle="--", linewidth=0.5)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    logger.info(f"Saved {kind} chart of {list(y)} against {x} to {path}")
    return path

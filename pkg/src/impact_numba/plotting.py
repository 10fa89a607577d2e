# src/impact_numba/plotting.py

"""Static SVG line charts of figure-data frames. Needs the optional ``plot`` extra."""

import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError

logger = logging.getLogger(__name__)

# figure name -> (x column, y column, grouping column, log x, log y)
CHARTS: Dict[str, Tuple[str, str, Optional[str], bool, bool]] = {
    "autocorr": ("tau", "C", "bin", True, True),
    "imbalance": ("T", "moment", "a", True, True),
    "signature": ("tau", "signature", None, True, False),
    "moments": ("T", "fitted", "n", True, True),
    "covariance": ("T", "covariance", "a", True, True),
    "collapse": ("x", "y", "T", False, False),
    "correlation": ("a", "R", "T", False, False),
    "fit": ("T", "sigma2", "mode", True, False),
    "proxy": ("Q_over_VD", "impact_over_sigma", "grouping", True, True),
}


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("SVG output needs matplotlib; install impact-numba[plot]") from exc
    plt.rcParams["svg.hashsalt"] = "impact-numba"
    return plt


def plot_lines(
    frame: pd.DataFrame,
    x: str,
    y: str,
    path: Path,
    group: Optional[str] = None,
    logx: bool = False,
    logy: bool = False,
    title: str = "",
) -> Path:
    """One line per ``group`` value; non-positive values are dropped on log axes."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    groups: Iterable = frame.groupby(group, sort=True) if group else [("", frame)]
    for key, part in groups:
        xs = part[x].to_numpy(np.float64)
        ys = part[y].to_numpy(np.float64)
        keep = np.isfinite(xs) & np.isfinite(ys)
        if logx:
            keep &= xs > 0
        if logy:
            keep &= ys > 0
        order = np.argsort(xs[keep], kind="stable")
        ax.plot(xs[keep][order], ys[keep][order], marker="o", markersize=3, linewidth=1.0,
                label=f"{group}={key}" if group else None)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if group:
        ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_figure(name: str, frame: pd.DataFrame, path: Path) -> Path:
    if name not in CHARTS:
        raise ConfigError(f"No chart defined for {name}. Available: {list(CHARTS)}")
    x, y, group, logx, logy = CHARTS[name]
    logger.debug("writing %s", path)
    return plot_lines(frame, x, y, path, group, logx, logy, title=name)

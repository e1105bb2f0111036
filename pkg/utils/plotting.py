import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from utils.errors import DomainError, SchemaError

log = logging.getLogger(__name__)

DEFAULT_WEIGHT = 0.89
# fixed salt and no date so the same input renders the same bytes
SVG_SALT = "gmah"
SVG_METADATA = {"Date": None}


def smooth(series, weight=DEFAULT_WEIGHT):
    """Exponential smoothing: y0 = x0, y_t = weight * y_{t-1} + (1 - weight) * x_t."""
    if not 0.0 <= weight < 1.0:
        raise DomainError("smoothing weight must lie in [0, 1), got {}".format(weight))
    series = pd.Series(series, dtype=np.float64)
    if series.empty:
        raise DomainError("cannot smooth an empty series")
    return series.ewm(alpha=1.0 - weight, adjust=False).mean()


def _save_svg(fig, out):
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT}):
        fig.savefig(out, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    log.info("wrote {}".format(out))
    return out


def load_curves(csv_paths, columns):
    frames = []
    for path in csv_paths:
        frame = pd.read_csv(path)
        missing = [c for c in list(columns) + ["step"] if c not in frame.columns]
        if missing:
            raise SchemaError("{} lacks column(s) {}".format(path, ", ".join(missing)))
        frames.append(frame)
    return frames


def curve_figure(frames, labels, columns, weight=DEFAULT_WEIGHT):
    """Raw series drawn faint, smoothed series bold, one pair per (run, column)."""
    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    k = 0
    for label, frame in zip(labels, frames):
        for column in columns:
            data = frame[["step", column]].dropna()
            if data.empty:
                continue
            color = colors[k % len(colors)]
            k += 1
            ax.plot(data["step"], data[column], color=color, alpha=0.25, linewidth=1.0)
            ax.plot(data["step"], smooth(data[column], weight), color=color, linewidth=2.0,
                    label="{} {}".format(label, column))
    ax.set_xlabel("environment steps")
    ax.set_ylabel(", ".join(columns))
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def render_curves(csv_paths, columns=("reward_mean",), weight=DEFAULT_WEIGHT, min_reward=False, out="curves.svg",
                  labels=None):
    columns = list(columns)
    if min_reward and "reward_min" not in columns:
        columns.append("reward_min")
    frames = load_curves(csv_paths, columns)
    labels = labels or [os.path.splitext(os.path.basename(p))[0] for p in csv_paths]
    return _save_svg(curve_figure(frames, labels, columns, weight), out)


def heatmap_figure(heatmaps):
    """One visit-count panel per agent, left to right, on a shared linear colour scale."""
    if hasattr(heatmaps, "heatmap"):
        heatmaps = heatmaps.heatmap
    heatmaps = np.asarray(heatmaps)
    if heatmaps.ndim == 2:
        heatmaps = heatmaps[None]
    n = len(heatmaps)
    vmax = max(1, int(heatmaps.max())) if heatmaps.size else 1

    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4), squeeze=False)
    for i, (ax, counts) in enumerate(zip(axes[0], heatmaps)):
        image = ax.imshow(counts, cmap="viridis", vmin=0, vmax=vmax, interpolation="nearest")
        for (y, x), value in np.ndenumerate(counts):
            ax.text(x, y, str(int(value)), ha="center", va="center", fontsize=6,
                    color="white" if value < vmax / 2 else "black")
        ax.set_title("agent {}".format(i))
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(image, ax=list(axes[0]), shrink=0.8)
    return fig


def render_heatmap(heatmaps, out="heatmap.svg"):
    return _save_svg(heatmap_figure(heatmaps), out)

"""PNG figures for CLI outputs, drawn with matplotlib's non-interactive backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_histogram(edges: Sequence[float], frequency: Sequence[float], path: PathLike,
                   title: str = "", xlabel: str = "value", cumulative: bool = False) -> Path:
    """Bar chart of bin frequencies over ``edges`` (one more edge than bins)."""
    edges = np.asarray(edges, dtype=float)
    freq = np.nan_to_num(np.asarray(frequency, dtype=float))
    fig, ax = plt.subplots(figsize=(7, 4))
    if cumulative:
        ax.step(edges[1:], freq, where="post")
    else:
        ax.bar(edges[:-1], freq, width=np.diff(edges), align="edge", edgecolor="none")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("cumulative frequency" if cumulative else "frequency")
    ax.set_title(title)
    nz = np.nonzero(freq)[0]
    if len(nz) and not cumulative:
        pad = max(2, (nz[-1] - nz[0]) // 4)
        lo, hi = max(0, nz[0] - pad), min(len(freq), nz[-1] + 1 + pad)
        ax.set_xlim(edges[lo], edges[hi])
    return _save(fig, path)


def plot_sweep(values: Sequence[float], estimates: Sequence[float], lows: Sequence[float],
               highs: Sequence[float], path: PathLike, param: str = "param", title: str = "") -> Path:
    """Point estimates with their confidence intervals against the swept parameter."""
    x = np.asarray(values, dtype=float)
    y = np.asarray(estimates, dtype=float)
    err = np.vstack([y - np.asarray(lows, dtype=float), np.asarray(highs, dtype=float) - y])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(x, y, yerr=np.nan_to_num(err), marker="o", capsize=4)
    if np.all(x > 0) and x.max() / x.min() >= 10:
        ax.set_xscale("log")
    ax.set_xlabel(param)
    ax.set_ylabel("estimate")
    ax.set_title(title)
    return _save(fig, path)


def plot_series(times: Sequence[float], series: Mapping[str, Sequence[float]], path: PathLike,
                title: str = "") -> Path:
    """Piecewise-constant population curves of the given species."""
    fig, ax = plt.subplots(figsize=(9, 4))
    t = np.asarray(times, dtype=float)
    for name, v in series.items():
        ax.step(t, np.asarray(v), where="post", label=name, linewidth=0.8)
    ax.set_xlabel("time")
    ax.set_ylabel("molecules")
    ax.set_title(title)
    if series:
        ax.legend(loc="upper right")
    return _save(fig, path)


def plot_peaks(levels: Sequence[int], freq_max: Sequence[float], freq_min: Sequence[float],
               path: PathLike, title: str = "") -> Path:
    """Frequency of committed maximal and minimal peak heights."""
    fig, ax = plt.subplots(figsize=(7, 4))
    lv = np.asarray(levels)
    ax.plot(lv, freq_max, label="maxima", linewidth=0.9)
    ax.plot(lv, freq_min, label="minima", linewidth=0.9)
    ax.set_xlabel("height")
    ax.set_ylabel("frequency")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)

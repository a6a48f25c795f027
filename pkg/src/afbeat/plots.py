"""SVG rendering for saliency overlays and risk trends (byte-stable output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colors as mcolors  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

SALIENCY_CMAP = "viridis"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "afbeat", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def saliency_colors(saliency) -> list[str]:
    cmap = plt.get_cmap(SALIENCY_CMAP)
    return [mcolors.to_hex(cmap(float(v))) for v in np.clip(saliency, 0.0, 1.0)]


def render_saliency_svg(path: str | Path, samples, saliency, title: str = "") -> None:
    samples = np.asarray(samples, dtype=np.float64)
    saliency = np.asarray(saliency, dtype=np.float64)
    x = np.arange(len(samples))
    pts = np.column_stack([x, samples]).reshape(-1, 1, 2)
    segs = np.concatenate([pts[:-1], pts[1:]], axis=1)
    seg_sal = 0.5 * (saliency[:-1] + saliency[1:])
    fig, ax = plt.subplots(figsize=(6, 3))
    lc = LineCollection(segs, cmap=SALIENCY_CMAP, norm=plt.Normalize(0.0, 1.0), linewidths=2)
    lc.set_array(seg_sal)
    ax.add_collection(lc)
    ax.set_xlim(0, max(len(samples) - 1, 1))
    pad = 0.1 * (np.ptp(samples) or 1.0)
    ax.set_ylim(samples.min() - pad, samples.max() + pad)
    ax.set_xlabel("sample")
    ax.set_ylabel("amplitude")
    if title:
        ax.set_title(title)
    fig.colorbar(lc, ax=ax, label="saliency")
    fig.tight_layout()
    _save(fig, path)


def render_trend_svg(path: str | Path, samples, fs: int, af_episodes, records, threshold: float) -> None:
    """Two panels: signal strip with AF spans in red, group-mean bars below."""
    samples = np.asarray(samples, dtype=np.float64)
    t = np.arange(len(samples)) / fs
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(10, 5), sharex=True)
    top.plot(t, samples, color="tab:blue", linewidth=0.5)
    for a, b in af_episodes:
        top.plot(t[a:b], samples[a:b], color="tab:red", linewidth=0.5)
    top.set_ylabel("ECG")
    blues = plt.get_cmap("Blues")
    for r in records:
        start, end = r.start_sample / fs, max(r.end_sample / fs, r.start_sample / fs + 1.0 / fs)
        color = "tab:red" if r.color_class == "red" else blues(0.35 + 0.15 * r.intensity)
        bottom.bar(start, r.p_avg, width=end - start, align="edge", color=color, edgecolor="none")
    bottom.axhline(threshold, color="black", linestyle="--", linewidth=0.8)
    bottom.set_ylim(0, 1)
    bottom.set_ylabel("mean risk")
    bottom.set_xlabel("time (s)")
    fig.tight_layout()
    _save(fig, path)

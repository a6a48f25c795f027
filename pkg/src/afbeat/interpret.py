"""Per-beat class-activation saliency."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from afbeat.io_formats import ModelWeights
from afbeat.net1d.model import backward, default_cam_layer, forward
from afbeat.plots import render_saliency_svg, saliency_colors


@dataclass
class CamResult:
    target_class: int
    source_layer: str
    raw_map: np.ndarray          # feature resolution, >= 0
    upsampled_map: np.ndarray    # length L, max-normalised to [0, 1]
    probabilities: np.ndarray    # model output for the beat, unchanged by CAM
    activations: np.ndarray | None = None   # v, (C, T)
    gradients: np.ndarray | None = None     # w = dL/dv, (C, T)


def cam_from_maps(activations, gradients, length: int) -> tuple[np.ndarray, np.ndarray]:
    """ReLU of the channel sum of ``activations * gradients``, plus the resampled map."""
    v = np.asarray(activations, dtype=np.float64)
    w = np.asarray(gradients, dtype=np.float64)
    raw = np.maximum((v * w).sum(axis=0), 0.0)
    return raw, upsample(raw, length)


def upsample(raw, length: int) -> np.ndarray:
    """Linear interpolation to ``length`` points (cell-centre aligned), then max-normalise."""
    raw = np.asarray(raw, dtype=np.float64)
    t = len(raw)
    if t == length:
        up = raw.copy()
    else:
        src = (np.arange(t) + 0.5) * length / t - 0.5
        up = np.interp(np.arange(length), src, raw)
    peak = up.max() if up.size else 0.0
    return up / peak if peak > 0 else np.zeros(length)


def compute_cam(weights: ModelWeights, beat, target_class: int = 1, layer: str | None = None,
                keep_maps: bool = False) -> CamResult:
    """Saliency of one beat for ``target_class`` at ``layer`` (default: deepest conv).

    The gradient is that of the cross-entropy loss computed with the label set
    to ``target_class``, taken w.r.t. the layer output. Eval mode; the weights
    are not modified.
    """
    if target_class not in (0, 1):
        raise ValueError("target_class must be 0 or 1")
    layer = layer or default_cam_layer(weights.config)
    x = np.asarray(beat, dtype=np.float64).reshape(1, weights.config.in_channels, -1)
    probs, trace = forward(weights, x, mode="eval", trace=True)
    if layer not in trace.activations:
        raise KeyError(f"unknown layer name: {layer!r}")
    _, agrads = backward(weights, x, [target_class], trace, capture=(layer,))
    v = trace.activations[layer][0]
    w = agrads[layer][0]
    raw, up = cam_from_maps(v, w, x.shape[2])
    return CamResult(target_class, layer, raw, up, probs[0].copy(),
                     v.copy() if keep_maps else None, w.copy() if keep_maps else None)


def cam_csv(beat, cam: CamResult) -> str:
    beat = np.asarray(beat, dtype=np.float64).reshape(-1)
    lines = [f"# layer={cam.source_layer}", f"# target_class={cam.target_class}",
             f"# p_af={float(cam.probabilities[1])!r}", "position,sample,saliency,color"]
    for i, (s, v, c) in enumerate(zip(beat, cam.upsampled_map, saliency_colors(cam.upsampled_map))):
        lines.append(f"{i},{float(s)!r},{float(v)!r},{c}")
    return "\n".join(lines) + "\n"


def read_cam_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Saliency values and colours from a sidecar written by :func:`render_cam`."""
    vals, cols = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("position"):
            continue
        _, _, v, c = line.split(",")
        vals.append(float(v))
        cols.append(c)
    return np.array(vals), cols


def render_cam(beat, cam: CamResult, svg_path: str | Path, csv_path: str | Path | None = None) -> Path:
    """Write the coloured beat trace as SVG and the saliency values as CSV."""
    svg_path = Path(svg_path)
    csv_path = Path(csv_path) if csv_path is not None else svg_path.with_suffix(".csv")
    beat = np.asarray(beat, dtype=np.float64).reshape(-1)
    if len(beat) != len(cam.upsampled_map):
        raise ValueError("beat and saliency map differ in length")
    render_saliency_svg(svg_path, beat, cam.upsampled_map,
                        title=f"class {cam.target_class}, p(AF)={float(cam.probabilities[1]):.3f}")
    csv_path.write_text(cam_csv(beat, cam), encoding="utf-8")
    return csv_path

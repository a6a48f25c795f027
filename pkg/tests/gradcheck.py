"""Central finite-difference oracle for Net1D gradients."""

from __future__ import annotations

import numpy as np

from afbeat.net1d import backward, build_model, forward, mean_loss, reduced_config
from afbeat.net1d.model import is_running_stat

# Conv biases that feed a train-mode batch norm have an exactly zero gradient.
# Their difference quotient is pure roundoff (~1e-11), so the relative error
# uses an absolute floor instead of dividing roundoff by roundoff.
REL_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def gradient_check(seed: int, n_coords: int = 100, h: float = 1e-5, batch: int = 4, config=None):
    """Errors of analytic vs central-difference gradients at random coordinates."""
    config = config or reduced_config()
    rng = np.random.default_rng(seed)
    weights = build_model(config, seed=seed, dtype=np.float64)
    # perturb batch-norm affine terms away from their identity init
    for name, arr in weights.tensors.items():
        if ".bn.weight" in name or ".bn.bias" in name:
            arr += rng.normal(scale=0.1, size=arr.shape)
    x = rng.normal(size=(batch, config.in_channels, config.beat_length))
    y = np.arange(batch) % 2
    dropout_seed = seed + 1000

    _, trace = forward(weights, x, mode="train", trace=True, rng=np.random.default_rng(dropout_seed),
                       update_running_stats=False)
    grads, _ = backward(weights, x, y, trace)

    names = [n for n in weights.tensors if not is_running_stat(n)]
    sizes = np.array([weights.tensors[n].size for n in names])
    flat = rng.choice(sizes.sum(), size=n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = []
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        name, j = names[i], int(f - offsets[i])
        arr = weights.tensors[name].reshape(-1)
        orig = arr[j]
        arr[j] = orig + h
        up = mean_loss(weights, x, y, seed=dropout_seed)
        arr[j] = orig - h
        down = mean_loss(weights, x, y, seed=dropout_seed)
        arr[j] = orig
        numeric = (up - down) / (2 * h)
        errors.append(relative_error(float(grads[name].reshape(-1)[j]), numeric))
    return np.array(errors)

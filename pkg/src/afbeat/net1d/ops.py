"""Layer primitives with explicit backward passes.

Arrays are laid out ``(batch, channels, time)``. Each ``*_forward`` returns
``(output, cache)`` and the matching ``*_backward`` consumes that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def sigmoid(x):
    # split by sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def same_pad(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


# -- grouped 1-D convolution, stride 1, "same" zero padding ----------------

def conv_forward(x, w, b, groups: int):
    bsz, cin, t = x.shape
    cout, cig, k = w.shape
    if cin != cig * groups:
        raise ValueError(f"conv expects {cig * groups} input channels, got {cin}")
    cog = cout // groups
    left, right = same_pad(k)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    cols = sliding_window_view(xp, k, axis=2)                    # (B, Cin, T, k)
    cols = cols.reshape(bsz, groups, cig, t, k).transpose(1, 0, 3, 2, 4).reshape(groups, bsz * t, cig * k)
    wg = w.reshape(groups, cog, cig * k).transpose(0, 2, 1)     # (g, cig*k, cog)
    out = np.matmul(cols, wg)                                    # (g, B*T, cog)
    out = out.reshape(groups, bsz, t, cog).transpose(1, 0, 3, 2).reshape(bsz, cout, t)
    out = out + b[None, :, None]
    return out, (cols, wg, x.shape, w.shape, groups)


def conv_backward(dout, cache):
    cols, wg, xshape, wshape, groups = cache
    bsz, cin, t = xshape
    cout, cig, k = wshape
    cog = cout // groups
    dy = dout.reshape(bsz, groups, cog, t).transpose(1, 0, 3, 2).reshape(groups, bsz * t, cog)
    dw = np.matmul(cols.transpose(0, 2, 1), dy)                 # (g, cig*k, cog)
    dw = dw.transpose(0, 2, 1).reshape(cout, cig, k)
    db = dout.sum(axis=(0, 2))
    dcols = np.matmul(dy, wg.transpose(0, 2, 1))                 # (g, B*T, cig*k)
    dcols = dcols.reshape(groups, bsz, t, cig, k).transpose(1, 0, 3, 2, 4).reshape(bsz, cin, t, k)
    left, _ = same_pad(k)
    dxp = np.zeros((bsz, cin, t + k - 1), dtype=dout.dtype)
    for j in range(k):
        dxp[:, :, j:j + t] += dcols[..., j]
    return dxp[:, :, left:left + t], dw, db


# -- batch normalisation over (batch, time) ---------------------------------

def bn_forward(x, gamma, beta, running_mean, running_var, train: bool):
    if train:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, gamma, train, mean, var)


def bn_backward(dout, cache):
    xhat, inv_std, gamma, train, _, _ = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if train:
        n = xhat.shape[0] * xhat.shape[2]
        dx = (inv_std[None, :, None] / n) * (
            n * dxhat
            - dxhat.sum(axis=(0, 2))[None, :, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        )
    else:
        dx = dxhat * inv_std[None, :, None]
    return dx, dgamma, dbeta


def bn_running_update(running_mean, running_var, cache, n: int, momentum: float = BN_MOMENTUM):
    """Momentum update with the unbiased batch variance, in place."""
    _, _, _, _, mean, var = cache
    unbiased = var * n / (n - 1) if n > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased


# -- activations -------------------------------------------------------------

def swish_forward(x):
    s = sigmoid(x)
    return x * s, (x, s)


def swish_backward(dout, cache):
    x, s = cache
    return dout * (s + x * s * (1.0 - s))


def dropout_forward(x, rate: float, rng: np.random.Generator | None):
    if rng is None or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# -- pooling and shortcut ----------------------------------------------------

def maxpool_forward(x):
    """Window 2, stride 2; odd lengths are right-padded with one zero."""
    bsz, c, t = x.shape
    if t % 2:
        x = np.concatenate([x, np.zeros((bsz, c, 1), dtype=x.dtype)], axis=2)
    pairs = x.reshape(bsz, c, -1, 2)
    idx = pairs.argmax(axis=3)
    out = np.take_along_axis(pairs, idx[..., None], axis=3)[..., 0]
    return out, (idx, t)


def maxpool_backward(dout, cache):
    idx, t = cache
    bsz, c, half = dout.shape
    dpairs = np.zeros((bsz, c, half, 2), dtype=dout.dtype)
    np.put_along_axis(dpairs, idx[..., None], dout[..., None], axis=3)
    return dpairs.reshape(bsz, c, 2 * half)[:, :, :t]


def channel_pad_slices(cin: int, cout: int) -> tuple[int, int]:
    """Leading/trailing channel padding (negative values crop)."""
    front = (cout - cin) // 2
    return front, cout - cin - front


def channel_pad_forward(x, cout: int):
    cin = x.shape[1]
    if cin == cout:
        return x
    front, back = channel_pad_slices(cin, cout)
    if front >= 0:
        return np.pad(x, ((0, 0), (front, back), (0, 0)))
    return x[:, -front:cin + back, :]


def channel_pad_backward(dout, cin: int):
    cout = dout.shape[1]
    if cin == cout:
        return dout
    front, back = channel_pad_slices(cin, cout)
    if front >= 0:
        return dout[:, front:front + cin, :]
    return np.pad(dout, ((0, 0), (-front, -back), (0, 0)))


# -- dense layers and channel gating -----------------------------------------

def linear_forward(x, w, b):
    return x @ w.T + b, x


def linear_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def se_scale(feature_map, gate):
    """``A[a, b, c] = B[a, b, c] * C[a, b]``."""
    feature_map = np.asarray(feature_map)
    gate = np.asarray(gate)
    if feature_map.ndim != 3 or gate.ndim != 2 or feature_map.shape[:2] != gate.shape:
        raise ValueError(f"se_scale shape mismatch: {feature_map.shape} vs {gate.shape}")
    return np.einsum("abc,ab->abc", feature_map, gate)

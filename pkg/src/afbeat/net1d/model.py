"""Net1D: stem convolution, residual SE blocks in stages, pooled linear head.

Block layout (prefix ``s{stage}.b{block}``):

* ``pre``   - extra base-conv, only in the very first block of the network
* ``conv1`` - base-conv ``C_in -> C_out`` (dense when channels change, grouped otherwise)
* ``pool``  - max-pool 2, only in the first block of each stage
* ``conv2`` - grouped base-conv ``C_out -> C_out``
* ``se``    - squeeze-and-excitation gate
* shortcut  - max-pooled like the main path, channel zero-padded (or centre-cropped), then summed

A base-conv is batch-norm -> swish -> dropout -> same-padded grouped conv,
with ``groups = channels / groups_width``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from afbeat.io_formats import ModelWeights
from afbeat.net1d import ops
from afbeat.net1d.config import Net1dConfig, stage_lengths

CE_EPS = 1e-12
RUNNING_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class BlockSpec:
    prefix: str
    c_in: int
    c_out: int
    has_pre: bool
    pools: bool


def block_specs(config: Net1dConfig) -> list[BlockSpec]:
    specs = []
    c_in = config.base_filters
    for s, (filters, n_blocks) in enumerate(zip(config.filter_list, config.block_list)):
        c_out = int(filters * config.ratio) if config.ratio != 1.0 else filters
        for b in range(n_blocks):
            specs.append(BlockSpec(
                prefix=f"s{s}.b{b}", c_in=c_in if b == 0 else c_out, c_out=c_out,
                has_pre=(s == 0 and b == 0), pools=(b == 0),
            ))
        c_in = c_out
    return specs


def head_channels(config: Net1dConfig) -> int:
    specs = block_specs(config)
    return specs[-1].c_out if specs else config.base_filters


def conv_groups(config: Net1dConfig, c_in: int, c_out: int) -> int:
    return c_out // config.groups_width if c_in == c_out else 1


def default_cam_layer(config: Net1dConfig) -> str:
    specs = block_specs(config)
    return f"{specs[-1].prefix}.conv2" if specs else "stem"


def layer_names(config: Net1dConfig) -> list[str]:
    names = ["stem"]
    for spec in block_specs(config):
        if spec.has_pre:
            names.append(f"{spec.prefix}.pre")
        names.append(f"{spec.prefix}.conv1")
        if spec.pools:
            names.append(f"{spec.prefix}.pool")
        names += [f"{spec.prefix}.conv2", spec.prefix]
    return names


# -- construction -------------------------------------------------------------

def _shapes(config: Net1dConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, kind) for every tensor, in file order."""
    k = config.kernel_size
    out = [
        ("stem.conv.weight", (config.base_filters, config.in_channels, k), "conv"),
        ("stem.conv.bias", (config.base_filters,), "zero"),
    ]

    def base_conv(prefix, c_in, c_out, groups):
        out.extend([
            (f"{prefix}.bn.weight", (c_in,), "one"),
            (f"{prefix}.bn.bias", (c_in,), "zero"),
            (f"{prefix}.bn.running_mean", (c_in,), "zero"),
            (f"{prefix}.bn.running_var", (c_in,), "one"),
            (f"{prefix}.conv.weight", (c_out, c_in // groups, k), "conv"),
            (f"{prefix}.conv.bias", (c_out,), "zero"),
        ])

    for spec in block_specs(config):
        p = spec.prefix
        if spec.has_pre:
            base_conv(f"{p}.pre", spec.c_in, spec.c_in, conv_groups(config, spec.c_in, spec.c_in))
        base_conv(f"{p}.conv1", spec.c_in, spec.c_out, conv_groups(config, spec.c_in, spec.c_out))
        base_conv(f"{p}.conv2", spec.c_out, spec.c_out, conv_groups(config, spec.c_out, spec.c_out))
        mid = spec.c_out // config.se_reduction
        out.extend([
            (f"{p}.se.fc1.weight", (mid, spec.c_out), "linear"),
            (f"{p}.se.fc1.bias", (mid,), "zero"),
            (f"{p}.se.fc2.weight", (spec.c_out, mid), "linear"),
            (f"{p}.se.fc2.bias", (spec.c_out,), "zero"),
        ])
    c = head_channels(config)
    out.extend([
        ("head.fc.weight", (config.n_classes, c), "linear"),
        ("head.fc.bias", (config.n_classes,), "zero"),
    ])
    return out


def build_model(config: Net1dConfig, seed: int = 0, dtype=np.float64) -> ModelWeights:
    """Glorot-uniform conv/linear weights, zero biases, identity batch-norm."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _shapes(config):
        if kind == "zero":
            arr = np.zeros(shape)
        elif kind == "one":
            arr = np.ones(shape)
        else:
            if kind == "conv":
                c_out, c_in_g, k = shape
                # grouped conv: fan_out counts every output channel
                fan_in, fan_out = c_in_g * k, c_out * k
            else:
                fan_out, fan_in = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = arr.astype(dtype)
    weights = ModelWeights(config=config, tensors=tensors)
    check_shapes(weights)
    return weights


def check_shapes(weights: ModelWeights) -> None:
    expected = {name: shape for name, shape, _ in _shapes(weights.config)}
    if list(expected) != list(weights.tensors):
        missing = set(expected) - set(weights.tensors)
        extra = set(weights.tensors) - set(expected)
        raise ValueError(f"weights do not match config (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    for name, shape in expected.items():
        if weights.tensors[name].shape != shape:
            raise ValueError(f"tensor {name} has shape {weights.tensors[name].shape}, expected {shape}")


def is_running_stat(name: str) -> bool:
    return name.endswith(RUNNING_SUFFIXES)


@dataclass(frozen=True)
class ParameterCount:
    trainable: int
    running: int

    @property
    def total(self) -> int:
        return self.trainable + self.running


def count_parameters(weights: ModelWeights | dict) -> ParameterCount:
    """Shape products summed over tensors, split trainable vs running stats.

    The trainable figure is the conventional "total parameters" of a network.
    """
    tensors = weights.tensors if isinstance(weights, ModelWeights) else weights
    trainable = running = 0
    for name, arr in tensors.items():
        n = math.prod(np.shape(arr))
        if is_running_stat(name):
            running += n
        else:
            trainable += n
    return ParameterCount(trainable, running)


def weights_token(weights: ModelWeights) -> str:
    h = hashlib.blake2b(digest_size=16)
    for name, arr in weights.tensors.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# -- loss -------------------------------------------------------------------

@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray | float  # dL/dp for the class-1 probability


def cross_entropy(y, p) -> LossValue:
    """Binary cross-entropy on the class-1 probability, clamped to [eps, 1-eps].

    Batched inputs give the batch mean and the gradient of that mean.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    p_arr = np.clip(np.asarray(p, dtype=np.float64), CE_EPS, 1.0 - CE_EPS)
    raw = np.asarray(p, dtype=np.float64)
    per = -(y_arr * np.log(p_arr) + (1.0 - y_arr) * np.log1p(-p_arr))
    # exact zero when the prediction matches the label
    per = np.where(raw == y_arr, 0.0, per)
    grad = -(y_arr / p_arr) + (1.0 - y_arr) / (1.0 - p_arr)
    if per.ndim == 0:
        return LossValue(float(per), float(grad))
    n = per.size
    return LossValue(float(per.mean()) if n else 0.0, grad / max(n, 1))


# -- forward ----------------------------------------------------------------

@dataclass
class ForwardTrace:
    mode: str
    token: str
    batch: np.ndarray
    probs: np.ndarray
    logits: np.ndarray
    activations: dict[str, np.ndarray] = field(default_factory=dict)
    caches: list = field(default_factory=list)


def _as_batch(x, config: Net1dConfig) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected input (B, {config.in_channels}, L), got {x.shape}")
    if x.shape[2] != config.beat_length:
        raise ValueError(f"expected beat length {config.beat_length}, got {x.shape[2]}")
    return x


def _base_conv_fwd(t, prefix, x, groups, train, rate, rng):
    bn_out, bn_c = ops.bn_forward(
        x, t[f"{prefix}.bn.weight"], t[f"{prefix}.bn.bias"],
        t[f"{prefix}.bn.running_mean"], t[f"{prefix}.bn.running_var"], train,
    )
    act, act_c = ops.swish_forward(bn_out)
    dropped, mask = ops.dropout_forward(act, rate, rng if train else None)
    out, conv_c = ops.conv_forward(dropped, t[f"{prefix}.conv.weight"], t[f"{prefix}.conv.bias"], groups)
    return out, (bn_c, act_c, mask, conv_c)


def _base_conv_bwd(t, prefix, dout, cache, grads):
    bn_c, act_c, mask, conv_c = cache
    d, grads[f"{prefix}.conv.weight"], grads[f"{prefix}.conv.bias"] = ops.conv_backward(dout, conv_c)
    d = ops.dropout_backward(d, mask)
    d = ops.swish_backward(d, act_c)
    d, grads[f"{prefix}.bn.weight"], grads[f"{prefix}.bn.bias"] = ops.bn_backward(d, bn_c)
    return d


def _se_fwd(t, prefix, x):
    squeezed = x.mean(axis=2)
    h1, c1 = ops.linear_forward(squeezed, t[f"{prefix}.fc1.weight"], t[f"{prefix}.fc1.bias"])
    a1, ca = ops.swish_forward(h1)
    h2, c2 = ops.linear_forward(a1, t[f"{prefix}.fc2.weight"], t[f"{prefix}.fc2.bias"])
    gate = ops.sigmoid(h2)
    return ops.se_scale(x, gate), (x, c1, ca, c2, gate)


def _se_bwd(t, prefix, dout, cache, grads):
    x, c1, ca, c2, gate = cache
    dx = dout * gate[:, :, None]
    dgate = (dout * x).sum(axis=2)
    dh2 = dgate * gate * (1.0 - gate)
    da1, grads[f"{prefix}.fc2.weight"], grads[f"{prefix}.fc2.bias"] = ops.linear_backward(dh2, c2, t[f"{prefix}.fc2.weight"])
    dh1 = ops.swish_backward(da1, ca)
    dsq, grads[f"{prefix}.fc1.weight"], grads[f"{prefix}.fc1.bias"] = ops.linear_backward(dh1, c1, t[f"{prefix}.fc1.weight"])
    dx += dsq[:, :, None] / x.shape[2]
    return dx


def forward(weights: ModelWeights, x, mode: str = "eval", trace: bool = False,
            rng: np.random.Generator | None = None, update_running_stats: bool = True):
    """Class probabilities ``(B, 2)``; with ``trace=True`` also a ForwardTrace.

    Train mode normalises with batch statistics, applies dropout drawn from
    ``rng`` (no dropout when ``rng`` is None) and, unless disabled, updates the
    running statistics in ``weights`` in place.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    cfg = weights.config
    t = weights.tensors
    x = _as_batch(x, cfg)
    if x.shape[0] == 0:
        probs = np.zeros((0, cfg.n_classes), dtype=x.dtype)
        if trace:
            return probs, ForwardTrace(mode, weights_token(weights), x, probs, probs.copy())
        return probs
    x = x.astype(t["stem.conv.weight"].dtype, copy=False)
    train = mode == "train"
    rate = cfg.dropout_rate
    token = weights_token(weights) if trace else ""
    caches: list = []
    acts: dict[str, np.ndarray] = {}

    h, c = ops.conv_forward(x, t["stem.conv.weight"], t["stem.conv.bias"], 1)
    caches.append(("stem", c))
    acts["stem"] = h
    bn_caches = []

    for spec in block_specs(cfg):
        p = spec.prefix
        identity = h
        out = h
        bc: dict = {}
        if spec.has_pre:
            out, bc["pre"] = _base_conv_fwd(t, f"{p}.pre", out, conv_groups(cfg, spec.c_in, spec.c_in), train, rate, rng)
            acts[f"{p}.pre"] = out
        out, bc["conv1"] = _base_conv_fwd(t, f"{p}.conv1", out, conv_groups(cfg, spec.c_in, spec.c_out), train, rate, rng)
        acts[f"{p}.conv1"] = out
        if spec.pools:
            out, bc["pool"] = ops.maxpool_forward(out)
            acts[f"{p}.pool"] = out
        out, bc["conv2"] = _base_conv_fwd(t, f"{p}.conv2", out, conv_groups(cfg, spec.c_out, spec.c_out), train, rate, rng)
        acts[f"{p}.conv2"] = out
        out, bc["se"] = _se_fwd(t, f"{p}.se", out)
        if spec.pools:
            identity, bc["id_pool"] = ops.maxpool_forward(identity)
        identity = ops.channel_pad_forward(identity, spec.c_out)
        h = out + identity
        acts[p] = h
        caches.append(("block", spec, bc))
        for key in ("pre", "conv1", "conv2"):
            if key in bc:
                bn_caches.append((f"{p}.{key}.bn", bc[key][0]))

    pooled = h.mean(axis=2)
    logits, lc = ops.linear_forward(pooled, t["head.fc.weight"], t["head.fc.bias"])
    caches.append(("head", (lc, h.shape[2])))
    probs = ops.softmax(logits)

    if train and update_running_stats:
        for prefix, bn_c in bn_caches:
            xhat = bn_c[0]
            ops.bn_running_update(t[f"{prefix}.running_mean"], t[f"{prefix}.running_var"], bn_c,
                                  xhat.shape[0] * xhat.shape[2])
        token = weights_token(weights) if trace else ""
    if not trace:
        return probs
    return probs, ForwardTrace(mode, token, x, probs, logits, acts, caches)


def predict_proba(weights: ModelWeights, beats, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class-1 probability per beat."""
    beats = np.asarray(beats)
    if beats.ndim == 2:
        beats = beats[:, None, :]
    out = np.empty(len(beats), dtype=np.float64)
    for start in range(0, len(beats), batch_size):
        out[start:start + batch_size] = forward(weights, beats[start:start + batch_size])[:, 1]
    return out


# -- backward ---------------------------------------------------------------

def backward(weights: ModelWeights, batch, labels, trace: ForwardTrace,
             capture: tuple[str, ...] = ()):
    """Gradients of the mean cross-entropy w.r.t. every trainable tensor.

    Returns ``(grads, activation_grads)``; the second dict holds the loss
    gradient w.r.t. each activation named in ``capture``.
    """
    if trace is None or not trace.caches:
        raise ValueError("missing trace: run forward(..., trace=True) first")
    if trace.token != weights_token(weights):
        raise ValueError("stale trace: weights changed since the forward pass")
    batch = _as_batch(batch, weights.config).astype(trace.batch.dtype, copy=False)
    if batch.shape != trace.batch.shape or not np.array_equal(batch, trace.batch):
        raise ValueError("stale trace: batch differs from the traced forward pass")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != batch.shape[0]:
        raise ValueError("labels length must equal batch size")
    unknown = set(capture) - set(trace.activations)
    if unknown:
        raise KeyError(f"unknown layer name(s): {sorted(unknown)}")

    cfg = weights.config
    t = weights.tensors
    bsz = batch.shape[0]
    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(bsz), labels] = 1.0
    dlogits = (trace.probs - onehot) / bsz

    grads: dict[str, np.ndarray] = {}
    agrads: dict[str, np.ndarray] = {}
    _, (lc, length) = trace.caches[-1]
    dpooled, grads["head.fc.weight"], grads["head.fc.bias"] = ops.linear_backward(dlogits, lc, t["head.fc.weight"])
    dh = np.repeat(dpooled[:, :, None] / length, length, axis=2)

    for kind, *rest in reversed(trace.caches[:-1]):
        if kind == "stem":
            if "stem" in capture:
                agrads["stem"] = dh
            _, grads["stem.conv.weight"], grads["stem.conv.bias"] = ops.conv_backward(dh, rest[0])
            continue
        spec, bc = rest
        p = spec.prefix
        if p in capture:
            agrads[p] = dh
        d_id = ops.channel_pad_backward(dh, spec.c_in)
        if spec.pools:
            d_id = ops.maxpool_backward(d_id, bc["id_pool"])
        d = _se_bwd(t, f"{p}.se", dh, bc["se"], grads)
        if f"{p}.conv2" in capture:
            agrads[f"{p}.conv2"] = d
        d = _base_conv_bwd(t, f"{p}.conv2", d, bc["conv2"], grads)
        if spec.pools:
            if f"{p}.pool" in capture:
                agrads[f"{p}.pool"] = d
            d = ops.maxpool_backward(d, bc["pool"])
        if f"{p}.conv1" in capture:
            agrads[f"{p}.conv1"] = d
        d = _base_conv_bwd(t, f"{p}.conv1", d, bc["conv1"], grads)
        if spec.has_pre:
            if f"{p}.pre" in capture:
                agrads[f"{p}.pre"] = d
            d = _base_conv_bwd(t, f"{p}.pre", d, bc["pre"], grads)
        dh = d + d_id

    ordered = {name: grads[name] for name in t if not is_running_stat(name)}
    return ordered, agrads


def mean_loss(weights: ModelWeights, batch, labels, mode: str = "train", seed: int | None = None) -> float:
    """Mean cross-entropy without touching running statistics (for gradient checks)."""
    rng = None if seed is None else np.random.default_rng(seed)
    probs = forward(weights, batch, mode=mode, rng=rng, update_running_stats=False)
    return cross_entropy(np.asarray(labels), probs[:, 1]).value

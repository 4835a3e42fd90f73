"""Causal CNN mapping log-magnitudes to FPD/BPD angle predictions.

Stem (BN -> 3x4 conv -> LeakyReLU -> gated 1x1 convs) feeds a body of five
1x1 conv blocks; the stem output also bypasses through its own BatchNorm
and is concatenated with the body output (bypass channels first). The head
is a gated 3x1 conv pair followed by two 1x1 output convs.

Tensors are laid out (C, F, T), or (B, C, F, T) with a batch axis; the
time axis is left-padded so every layer is causal. In strided mode the
stem convolution runs with temporal stride 2 and the output convs emit two
channels which are interleaved back to the full frame rate (channel 0 =
skipped frame tau-1, channel 1 = current frame tau).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .weights import BN_EPS, CnnWeights

LEAKY_SLOPE = 0.1


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, F, T) or (B, C, F, T), got shape {x.shape}")


def conv2d_causal(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride_time: int = 1
) -> np.ndarray:
    """2-D convolution, causal on the time axis, symmetric on frequency.

    ``kernel`` is (out_ch, in_ch, k_f, k_t) with odd k_f. Time is left-padded
    by k_t - 1 so output frame t sees input frames <= t*stride_time only;
    frequency is zero-padded (k_f - 1)/2 on each side so F is preserved.
    Output has ceil(T / stride_time) frames.
    """
    x4, squeeze = _as_batched(x)
    out = _conv_forward(x4, np.asarray(kernel, np.float64), np.asarray(bias, np.float64), stride_time)
    return out[0] if squeeze else out


def _conv_geometry(kernel: np.ndarray) -> tuple[int, int, int, int]:
    out_ch, in_ch, k_f, k_t = kernel.shape
    if k_f % 2 == 0:
        raise ValueError(f"frequency kernel size must be odd, got {k_f}")
    return out_ch, in_ch, k_f, k_t


def _conv_forward(x4, kernel, bias, stride_time):
    out_ch, in_ch, k_f, k_t = _conv_geometry(kernel)
    b, c, f, t = x4.shape
    if c != in_ch:
        raise ValueError(f"kernel expects {in_ch} input channels, got {c}")
    if stride_time not in (1, 2):
        raise ValueError(f"stride_time must be 1 or 2, got {stride_time}")
    pf = (k_f - 1) // 2
    xp = np.pad(x4, ((0, 0), (0, 0), (pf, pf), (k_t - 1, 0)))
    t_out = (t + stride_time - 1) // stride_time
    acc = np.zeros((out_ch, b * f * t_out))
    t_last = (t_out - 1) * stride_time
    for df in range(k_f):
        for dt in range(k_t):
            sl = xp[:, :, df : df + f, dt : dt + t_last + 1 : stride_time]
            acc += kernel[:, :, df, dt] @ sl.transpose(1, 0, 2, 3).reshape(in_ch, -1)
    out = acc.reshape(out_ch, b, f, t_out).transpose(1, 0, 2, 3)
    return out + bias[None, :, None, None]


def _conv_backward(dy, x4, kernel, stride_time):
    """Gradients of _conv_forward w.r.t. kernel, bias and input."""
    out_ch, in_ch, k_f, k_t = _conv_geometry(kernel)
    b, c, f, t = x4.shape
    pf = (k_f - 1) // 2
    xp = np.pad(x4, ((0, 0), (0, 0), (pf, pf), (k_t - 1, 0)))
    t_out = dy.shape[3]
    t_last = (t_out - 1) * stride_time
    dy2 = dy.transpose(1, 0, 2, 3).reshape(out_ch, -1)
    d_kernel = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for df in range(k_f):
        for dt in range(k_t):
            sl = xp[:, :, df : df + f, dt : dt + t_last + 1 : stride_time]
            d_kernel[:, :, df, dt] = dy2 @ sl.transpose(1, 0, 2, 3).reshape(in_ch, -1).T
            contrib = (kernel[:, :, df, dt].T @ dy2).reshape(in_ch, b, f, t_out)
            dxp[:, :, df : df + f, dt : dt + t_last + 1 : stride_time] += contrib.transpose(
                1, 0, 2, 3
            )
    d_bias = dy.sum(axis=(0, 2, 3))
    dx = dxp[:, :, pf : pf + f, k_t - 1 :]
    return d_kernel, d_bias, dx


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, slope * x)


def _leaky_relu_backward(dy, x, slope=LEAKY_SLOPE):
    return np.where(x > 0, dy, slope * dy)


def batchnorm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "infer",
) -> np.ndarray:
    """Per-channel batch normalization.

    'infer' normalizes with the running statistics; 'train' with the biased
    batch statistics over (batch, F, T).
    """
    x4, squeeze = _as_batched(x)
    if mode == "infer":
        out = _bn_infer(x4, gamma, beta, running_mean, running_var)
    elif mode == "train":
        out = _bn_train(x4, gamma, beta)[0]
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    return out[0] if squeeze else out


def _bn_infer(x4, gamma, beta, mean, var):
    scale = gamma / np.sqrt(var + BN_EPS)
    shift = beta - mean * scale
    return x4 * scale[None, :, None, None] + shift[None, :, None, None]


def _bn_train(x4, gamma, beta):
    axes = (0, 2, 3)
    mean = x4.mean(axis=axes)
    var = x4.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x4 - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma)
    return out, cache, mean, var


def _bn_train_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = (0, 2, 3)
    count = dy.shape[0] * dy.shape[2] * dy.shape[3]
    d_gamma = (dy * xhat).sum(axis=axes)
    d_beta = dy.sum(axis=axes)
    g = gamma * inv_std
    dx = g[None, :, None, None] * (
        dy
        - (d_beta / count)[None, :, None, None]
        - xhat * (d_gamma / count)[None, :, None, None]
    )
    return dx, d_gamma, d_beta


def freq_gated_conv(
    x: np.ndarray,
    value_kernel: np.ndarray,
    value_bias: np.ndarray,
    gate_kernel: np.ndarray,
    gate_bias: np.ndarray,
) -> np.ndarray:
    """conv(x; value) elementwise-scaled by sigmoid(conv(x; gate))."""
    if value_kernel.shape[0] != gate_kernel.shape[0]:
        raise ValueError("value and gate kernels must share output channels")
    value = conv2d_causal(x, value_kernel, value_bias)
    gate = expit(conv2d_causal(x, gate_kernel, gate_bias))
    return value * gate


def _interleave_pairs(raw: np.ndarray, t_orig: int) -> np.ndarray:
    """Restore frame rate from 2-channel strided outputs.

    ``raw`` is (B, 2, F, T2) with anchors at even input frames: channel 1
    holds the anchor frame 2j, channel 0 the skipped frame 2j-1. The j=0
    channel-0 slot (frame -1) is discarded.
    """
    b, ch, f, t2 = raw.shape
    if ch != 2:
        raise ValueError(f"strided head must emit 2 channels, got {ch}")
    out = np.zeros((b, 1, f, t_orig))
    n_even = (t_orig + 1) // 2
    out[:, 0, :, 0::2] = raw[:, 1, :, :n_even]
    n_odd = t_orig // 2
    out[:, 0, :, 1::2] = raw[:, 0, :, 1 : 1 + n_odd]
    return out


def _deinterleave_pairs(dy: np.ndarray, t2: int) -> np.ndarray:
    """Adjoint of _interleave_pairs: scatter (B, 1, F, T) back to (B, 2, F, T2)."""
    b, _, f, t_orig = dy.shape
    raw = np.zeros((b, 2, f, t2))
    n_even = (t_orig + 1) // 2
    raw[:, 1, :, :n_even] = dy[:, 0, :, 0::2]
    n_odd = t_orig // 2
    raw[:, 0, :, 1 : 1 + n_odd] = dy[:, 0, :, 1::2]
    return raw


def _pad_for_stride(x4: np.ndarray) -> np.ndarray:
    # An even frame count needs one extra stem anchor to cover the final
    # odd frame; duplicate the last column (clip-boundary look-ahead).
    if x4.shape[3] % 2 == 0:
        return np.concatenate([x4, x4[:, :, :, -1:]], axis=3)
    return x4


def forward_graph(
    x4: np.ndarray, w: CnnWeights, bn_mode: str = "infer", keep_cache: bool = False
):
    """Run the network on a (B, 1, F, T) batch.

    Returns ``(fpd_raw, bpd_raw, cache)`` where the outputs are (B, 1, F, T)
    raw (unwrapped) angles. ``cache`` is populated when ``keep_cache`` (used
    by the training backward pass) and also carries the train-mode batch
    statistics of every BatchNorm.
    """
    strided = w.mode == "strided"
    t_orig = x4.shape[3]
    if strided:
        x4 = _pad_for_stride(x4)
    cache: dict = {"t_orig": t_orig, "x": x4}
    bn_stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def bn(name, value):
        if bn_mode == "train":
            out, bn_cache, mean, var = _bn_train(value, w[f"{name}.gamma"], w[f"{name}.beta"])
            bn_stats[name] = (mean, var)
            if keep_cache:
                cache[name] = bn_cache
            return out
        return _bn_infer(
            value,
            w[f"{name}.gamma"],
            w[f"{name}.beta"],
            w[f"{name}.running_mean"],
            w[f"{name}.running_var"],
        )

    def conv(name, value, stride=1):
        return _conv_forward(value, w[f"{name}.kernel"], w[f"{name}.bias"], stride)

    h0 = bn("stem.bn", x4)
    h1 = conv("stem.conv", h0, stride=2 if strided else 1)
    h2 = leaky_relu(h1)
    sv = conv("stem.gate.value", h2)
    sg = expit(conv("stem.gate.gate", h2))
    stem_out = sv * sg

    h = stem_out
    body_cache = []
    for i in range(5):
        ci = conv(f"body.{i}.conv", h)
        ri = leaky_relu(ci)
        if keep_cache:
            body_cache.append((h, ci))
        h = bn(f"body.{i}.bn", ri)
    direct = bn("direct.bn", stem_out)
    cat = np.concatenate([direct, h], axis=1)

    hv = conv("head.gate.value", cat)
    hg = expit(conv("head.gate.gate", cat))
    hh = hv * hg
    bpd_raw = conv("head.out_bpd", hh)
    fpd_raw = conv("head.out_fpd", hh)
    if strided:
        t2 = bpd_raw.shape[3]
        cache["t2"] = t2
        bpd_raw = _interleave_pairs(bpd_raw, t_orig)
        fpd_raw = _interleave_pairs(fpd_raw, t_orig)
    if keep_cache:
        cache.update(
            h0=h0, h1=h1, h2=h2, sv=sv, sg=sg, stem_out=stem_out,
            body=body_cache, cat=cat, hv=hv, hg=hg, hh=hh,
        )
    cache["bn_stats"] = bn_stats
    return fpd_raw, bpd_raw, cache


def backward_graph(d_fpd: np.ndarray, d_bpd: np.ndarray, w: CnnWeights, cache: dict):
    """Backpropagate output gradients through a cached forward_graph run.

    Returns a dict of gradients for every learnable tensor. BatchNorms must
    have run in train mode (batch statistics are part of the graph).
    """
    strided = w.mode == "strided"
    grads: dict[str, np.ndarray] = {}

    def conv_bwd(name, dy, x_in, stride=1):
        dk, db, dx = _conv_backward(dy, x_in, w[f"{name}.kernel"], stride)
        grads[f"{name}.kernel"] = dk
        grads[f"{name}.bias"] = db
        return dx

    def bn_bwd(name, dy):
        dx, dg, dbeta = _bn_train_backward(dy, cache[name])
        grads[f"{name}.gamma"] = dg
        grads[f"{name}.beta"] = dbeta
        return dx

    if strided:
        t2 = cache["t2"]
        d_fpd = _deinterleave_pairs(d_fpd, t2)
        d_bpd = _deinterleave_pairs(d_bpd, t2)

    hh = cache["hh"]
    d_hh = conv_bwd("head.out_bpd", d_bpd, hh)
    d_hh += conv_bwd("head.out_fpd", d_fpd, hh)
    hv, hg = cache["hv"], cache["hg"]
    d_hv = d_hh * hg
    d_hg_pre = d_hh * hv * hg * (1.0 - hg)
    cat = cache["cat"]
    d_cat = conv_bwd("head.gate.value", d_hv, cat)
    d_cat += conv_bwd("head.gate.gate", d_hg_pre, cat)

    n_direct = cat.shape[1] // 2
    d_direct = d_cat[:, :n_direct]
    d_h = d_cat[:, n_direct:]
    d_stem_out = bn_bwd("direct.bn", d_direct)
    for i in reversed(range(5)):
        h_in, ci = cache["body"][i]
        d_ri = bn_bwd(f"body.{i}.bn", d_h)
        d_ci = _leaky_relu_backward(d_ri, ci)
        d_h = conv_bwd(f"body.{i}.conv", d_ci, h_in)
    d_stem_out += d_h

    sv, sg = cache["sv"], cache["sg"]
    d_sv = d_stem_out * sg
    d_sg_pre = d_stem_out * sv * sg * (1.0 - sg)
    h2 = cache["h2"]
    d_h2 = conv_bwd("stem.gate.value", d_sv, h2)
    d_h2 += conv_bwd("stem.gate.gate", d_sg_pre, h2)
    d_h1 = _leaky_relu_backward(d_h2, cache["h1"])
    d_h0 = conv_bwd("stem.conv", d_h1, cache["h0"], stride=2 if strided else 1)
    bn_bwd("stem.bn", d_h0)
    return grads


def forward(x: np.ndarray, w: CnnWeights, mode: str = "full"):
    """Inference: (1, F, T) log-magnitudes to raw (fpd, bpd) angle maps.

    The caller wraps the outputs into [-pi, pi).
    """
    if mode != w.mode:
        raise ValueError(f"weights are {w.mode!r} but {mode!r} inference was requested")
    x4, squeeze = _as_batched(x)
    if x4.shape[1] != 1:
        raise ValueError(f"expected a single input channel, got {x4.shape[1]}")
    if x4.shape[2] == 0 or x4.shape[3] == 0:
        raise ValueError("empty input")
    fpd_raw, bpd_raw, _ = forward_graph(x4, w, bn_mode="infer")
    if squeeze:
        return fpd_raw[0], bpd_raw[0]
    return fpd_raw, bpd_raw


def count_params_and_macs(
    w: CnnWeights, freq_bins: int = 513, frames_per_second: float = 62.5
) -> tuple[int, float, float]:
    """Learnable parameter count, MACs per output frame, and GMAC/s.

    MACs count convolution multiply-accumulates only (BatchNorm and
    activations excluded). In strided mode every convolution runs once per
    two output frames.
    """
    params = w.param_count()
    macs_per_run = sum(
        int(np.prod(shape)) * freq_bins for _, shape in w.conv_shapes()
    )
    per_frame = macs_per_run / (2.0 if w.mode == "strided" else 1.0)
    gmac_per_s = per_frame * frames_per_second / 1e9
    return params, per_frame, gmac_per_s

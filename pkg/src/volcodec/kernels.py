"""Shared numerical kernels (numba-compiled).

Every forward-path quantity that must be bit-reproducible across the
batch, streaming, and per-pixel decode paths is computed here, and only
here, in one mandated accumulation order: accumulators start at the
bias, convolution taps are added in kernel raster order, and channel
reductions run in ascending channel index.  All math is float64; the
kernels never use fused multiply-add or pairwise summation, so the same
per-output sequence of IEEE-754 operations runs no matter which outer
loop drives them.

The quantized-CDF helpers at the bottom are the only place the codec
evaluates the logistic CDF; encoder and decoder both call them, which
makes coder symmetry structural.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GRID_BITS = 16
GRID = 1 << GRID_BITS  # quantized CDF grid: [0, 65536]
LOG_S_MIN = -7.0
LOG_S_MAX = 7.0


def tap_offsets(k: int) -> np.ndarray:
    """(k*k, 2) array of (di, dj) offsets in kernel raster order."""
    p = k // 2
    return np.array(
        [(di, dj) for di in range(-p, p + 1) for dj in range(-p, p + 1)],
        dtype=np.int64,
    )


def causal_tap_offsets(k: int) -> np.ndarray:
    """The (k*k - 1) // 2 offsets strictly before the center in raster order."""
    offs = tap_offsets(k)
    return np.ascontiguousarray(offs[: (k * k - 1) // 2])


@njit(cache=True, inline="always")
def _hard_sigmoid(x: float) -> float:
    if x <= -3.0:
        return 0.0
    if x >= 3.0:
        return 1.0
    return x / 6.0 + 0.5


@njit(cache=True, inline="always")
def _hard_tanh(x: float) -> float:
    if x <= -1.0:
        return -1.0
    if x >= 1.0:
        return 1.0
    return x


@njit(cache=True)
def conv_taps(xpad, w, b, offs, pad, out):
    """Tap-list convolution of a single padded plane.

    xpad: (H + 2*pad, W + 2*pad) zero-padded input
    w:    (C, T) weights, one row per output channel, taps in offs order
    out:  (H, W, C) pre-activation outputs
    """
    H, W, C = out.shape
    T = offs.shape[0]
    for i in range(H):
        for j in range(W):
            for c in range(C):
                acc = b[c]
                for t in range(T):
                    acc = acc + w[c, t] * xpad[i + pad + offs[t, 0], j + pad + offs[t, 1]]
                out[i, j, c] = acc


@njit(cache=True)
def depthwise_conv(hpad, w, b, offs, pad, out):
    """Per-channel tap-list convolution.

    hpad: (H + 2*pad, W + 2*pad, M); out: (H, W, M)
    """
    H, W, M = out.shape
    T = offs.shape[0]
    for i in range(H):
        for j in range(W):
            for m in range(M):
                acc = b[m]
                for t in range(T):
                    acc = acc + w[m, t] * hpad[i + pad + offs[t, 0], j + pad + offs[t, 1], m]
                out[i, j, m] = acc


@njit(cache=True)
def pointwise_relu(mid, pw_w, pw_b, relu_out, out):
    """ReLU followed by a 1x1 conv M -> C, channels ascending.

    mid: (H, W, M) depthwise pre-activations; relu_out: (H, W, M);
    out: (H, W, C).
    """
    H, W, M = mid.shape
    C = pw_b.shape[0]
    for i in range(H):
        for j in range(W):
            for m in range(M):
                v = mid[i, j, m]
                relu_out[i, j, m] = v if v > 0.0 else 0.0
            for c in range(C):
                acc = pw_b[c]
                for m in range(M):
                    acc = acc + pw_w[c, m] * relu_out[i, j, m]
                out[i, j, c] = acc


@njit(cache=True)
def gate_grid(fx, fh, hprev, out):
    """Parameter-free fusion gate over a grid.

    fx, fh: (H, W, 3M) pre-activation features, channel layout
    [0,M) reset / [M,2M) update / [2M,3M) candidate; hprev, out: (H, W, M).
    """
    H, W, M = out.shape
    for i in range(H):
        for j in range(W):
            for m in range(M):
                a = fx[i, j, m] + fh[i, j, m]
                bu = fx[i, j, M + m] + fh[i, j, M + m]
                r = _hard_sigmoid(a)
                u = _hard_sigmoid(bu)
                cpre = fx[i, j, 2 * M + m] + r * fh[i, j, 2 * M + m]
                c = _hard_tanh(cpre)
                out[i, j, m] = u * hprev[i, j, m] + (1.0 - u) * c


@njit(cache=True)
def estimate_grid(fused, ew, eb, mu, logs, logs_raw):
    """Linear readout of (mu_n, log s); logs is clamped, logs_raw is not."""
    H, W, M = fused.shape
    for i in range(H):
        for j in range(W):
            acc0 = eb[0]
            for m in range(M):
                acc0 = acc0 + ew[0, m] * fused[i, j, m]
            acc1 = eb[1]
            for m in range(M):
                acc1 = acc1 + ew[1, m] * fused[i, j, m]
            mu[i, j] = acc0
            logs_raw[i, j] = acc1
            if acc1 < LOG_S_MIN:
                acc1 = LOG_S_MIN
            elif acc1 > LOG_S_MAX:
                acc1 = LOG_S_MAX
            logs[i, j] = acc1


@njit(cache=True)
def predict_pixel(xpad, mw, mb, offs, pad, fh, hprev, ew, eb, i, j, fx_buf):
    """Single-pixel prediction along the decode path.

    Reads only strictly-causal taps of xpad, so it is safe to call with a
    partially decoded slice buffer.  Bitwise-identical to the batch path:
    same accumulation order per output value.
    """
    C = mb.shape[0]
    M = hprev.shape[2]
    T = offs.shape[0]
    for c in range(C):
        acc = mb[c]
        for t in range(T):
            acc = acc + mw[c, t] * xpad[i + pad + offs[t, 0], j + pad + offs[t, 1]]
        fx_buf[c] = acc
    mu_acc = eb[0]
    ls_acc = eb[1]
    for m in range(M):
        a = fx_buf[m] + fh[i, j, m]
        bu = fx_buf[M + m] + fh[i, j, M + m]
        r = _hard_sigmoid(a)
        u = _hard_sigmoid(bu)
        cpre = fx_buf[2 * M + m] + r * fh[i, j, 2 * M + m]
        c = _hard_tanh(cpre)
        fused = u * hprev[i, j, m] + (1.0 - u) * c
        mu_acc = mu_acc + ew[0, m] * fused
        ls_acc = ls_acc + ew[1, m] * fused
    if ls_acc < LOG_S_MIN:
        ls = LOG_S_MIN
    elif ls_acc > LOG_S_MAX:
        ls = LOG_S_MAX
    else:
        ls = ls_acc
    return mu_acc, ls


# --- quantized CDF for the coder -------------------------------------------


@njit(cache=True, inline="always")
def cdf_grid(v, mu, logs, depth, scale_l):
    """Quantized cumulative grid value below symbol v, on [0, GRID].

    Tail-extended: v <= 0 maps to 0 and v >= 2**depth maps to GRID, so
    the per-slice symbol intervals always partition [0, GRID).
    """
    if v <= 0:
        return 0
    n = 1 << depth
    if v >= n:
        return GRID
    s = math.exp(logs)
    edge = ((v - 0.5) / n) * scale_l
    z = (edge - mu) / s
    cdf = 1.0 / (1.0 + math.exp(-z))
    return int(cdf * GRID)


@njit(cache=True)
def quantize_interval_q(x, mu, logs, depth, scale_l):
    """(c_lo, c_hi) grid interval of symbol x; empty (escape) iff c_hi <= c_lo."""
    return (
        cdf_grid(x, mu, logs, depth, scale_l),
        cdf_grid(x + 1, mu, logs, depth, scale_l),
    )


@njit(cache=True)
def locate_symbol_q(f, mu, logs, depth, scale_l):
    """Largest symbol v with cdf_grid(v) <= f; O(depth) CDF evaluations.

    For f inside a nonempty interval this is the unique symbol whose
    interval contains f; zero-width (escape) symbols are never returned.
    """
    lo = 0
    hi = (1 << depth) - 1
    while lo < hi:
        mid = (lo + hi + 1) >> 1
        if cdf_grid(mid, mu, logs, depth, scale_l) <= f:
            lo = mid
        else:
            hi = mid - 1
    return lo


@njit(cache=True)
def quantize_slice(vals, mu, logs, depth, scale_l, lo_out, hi_out):
    """Vectorized quantize_interval_q over one slice (encode side)."""
    H, W = vals.shape
    for i in range(H):
        for j in range(W):
            x = int(vals[i, j])
            lo_out[i, j] = cdf_grid(x, mu[i, j], logs[i, j], depth, scale_l)
            hi_out[i, j] = cdf_grid(x + 1, mu[i, j], logs[i, j], depth, scale_l)

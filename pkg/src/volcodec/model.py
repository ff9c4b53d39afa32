"""Forward model: causal features, slice fusion, and per-slice prediction.

One slice step runs three feature extractors and a parameter-free gate:

  * a strictly causal masked conv over the current slice (prediction path),
  * a full-window conv over the completed slice (hidden-state update path),
  * a depthwise-separable conv over the previous hidden state, computed
    once per slice and shared by both paths.

The gate fuses slice features with hidden-state features exactly like a
GRU cell with hard (piecewise-linear) activations, used identically in
training and inference.  predict_slice feeds a linear readout of the
fused vector into (mu_n, log s) for the likelihood; update_hidden emits
the next hidden state.

All heavy math lives in kernels.py; this module owns shapes, padding,
and normalization.  Hidden states are (H, W, M) float64 arrays, feature
grids are (H, W, 3M) with channel layout [0,M) reset / [M,2M) update /
[2M,3M) candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import LOG_S_MAX, LOG_S_MIN, causal_tap_offsets, tap_offsets
from .params import ModelParams

_OFFSETS_FULL: dict[int, np.ndarray] = {}
_OFFSETS_CAUSAL: dict[int, np.ndarray] = {}


def _full_offsets(k: int) -> np.ndarray:
    if k not in _OFFSETS_FULL:
        _OFFSETS_FULL[k] = tap_offsets(k)
    return _OFFSETS_FULL[k]


def _causal_offsets(k: int) -> np.ndarray:
    if k not in _OFFSETS_CAUSAL:
        _OFFSETS_CAUSAL[k] = causal_tap_offsets(k)
    return _OFFSETS_CAUSAL[k]


def hard_sigmoid(x):
    """0 below -3, 1 above 3, x/6 + 0.5 between; elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= -3.0, 0.0, np.where(x >= 3.0, 1.0, x / 6.0 + 0.5))


def hard_tanh(x):
    """Identity clamped to [-1, 1]; elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x, -1.0, 1.0)


@dataclass
class GateFeatures:
    """(H, W, 3M) pre-activation feature grid with the canonical layout."""

    data: np.ndarray

    @property
    def m(self) -> int:
        return self.data.shape[2] // 3

    @property
    def rst(self) -> np.ndarray:
        return self.data[:, :, : self.m]

    @property
    def upd(self) -> np.ndarray:
        return self.data[:, :, self.m : 2 * self.m]

    @property
    def cand(self) -> np.ndarray:
        return self.data[:, :, 2 * self.m :]


def hidden_zeros(h: int, w: int, m: int) -> np.ndarray:
    """Initial hidden state: all zeros."""
    return np.zeros((h, w, m), dtype=np.float64)


def normalize_slice(s: np.ndarray, depth_bits: int) -> np.ndarray:
    """Scale integer samples into [0, 1) for the convolution inputs."""
    return np.asarray(s, dtype=np.float64) / float(1 << depth_bits)


def pad_plane(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad a (H, W) plane by pad on every side."""
    h, w = x.shape
    out = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.float64)
    out[pad : pad + h, pad : pad + w] = x
    return out


# --- internal forward pieces (normalized/padded inputs) ----------------------


def _masked_conv(xpad: np.ndarray, p: ModelParams, h: int, w: int) -> np.ndarray:
    out = np.empty((h, w, 3 * p.m), dtype=np.float64)
    kernels.conv_taps(xpad, p.masked_w, p.masked_b, _causal_offsets(p.kernel), p.kernel // 2, out)
    return out


def _std_conv(xpad: np.ndarray, p: ModelParams, h: int, w: int) -> np.ndarray:
    out = np.empty((h, w, 3 * p.m), dtype=np.float64)
    kernels.conv_taps(xpad, p.std_w, p.std_b, _full_offsets(p.kernel), p.kernel // 2, out)
    return out


def _dsc(h_prev: np.ndarray, p: ModelParams):
    """Depthwise conv -> ReLU -> pointwise; returns (fh, mid, relu_mid)."""
    hh, ww, m = h_prev.shape
    q = p.k_dsc // 2
    hpad = np.zeros((hh + 2 * q, ww + 2 * q, m), dtype=np.float64)
    hpad[q : q + hh, q : q + ww, :] = h_prev
    mid = np.empty((hh, ww, m), dtype=np.float64)
    kernels.depthwise_conv(hpad, p.dw_w, p.dw_b, _full_offsets(p.k_dsc), q, mid)
    relu_mid = np.empty_like(mid)
    fh = np.empty((hh, ww, 3 * m), dtype=np.float64)
    kernels.pointwise_relu(mid, p.pw_w, p.pw_b, relu_mid, fh)
    return fh, mid, relu_mid


def _gate(f: np.ndarray, fh: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    out = np.empty_like(h_prev)
    kernels.gate_grid(f, fh, h_prev, out)
    return out


def _estimate(fused: np.ndarray, p: ModelParams):
    hh, ww, _ = fused.shape
    mu = np.empty((hh, ww), dtype=np.float64)
    logs = np.empty((hh, ww), dtype=np.float64)
    logs_raw = np.empty((hh, ww), dtype=np.float64)
    kernels.estimate_grid(fused, p.est_w, p.est_b, mu, logs, logs_raw)
    return mu, logs, logs_raw


# --- public slice-level operations -------------------------------------------


def masked_conv_forward(s: np.ndarray, p: ModelParams) -> GateFeatures:
    """Strictly causal conv features of a slice (center excluded).

    Output at (i, j) depends only on samples at scan positions before
    (i, j): rows above, plus left neighbors in the same row.
    """
    x = normalize_slice(s, p.depth_bits)
    h, w = x.shape
    return GateFeatures(_masked_conv(pad_plane(x, p.kernel // 2), p, h, w))


def standard_conv_forward(s: np.ndarray, p: ModelParams) -> GateFeatures:
    """Full-window conv features of a completed slice."""
    x = normalize_slice(s, p.depth_bits)
    h, w = x.shape
    return GateFeatures(_std_conv(pad_plane(x, p.kernel // 2), p, h, w))


def dsc_forward(h_prev: np.ndarray, p: ModelParams) -> GateFeatures:
    """Depthwise-separable conv features of the previous hidden state."""
    fh, _, _ = _dsc(h_prev, p)
    return GateFeatures(fh)


def fusion_gate(fx: np.ndarray, fh: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """Parameter-free gate at a single position.

    fx, fh: length-3M pre-activation vectors (reset/update/candidate
    thirds); h_prev: length-M.  Returns the fused length-M vector:

        r = hsig(fx_r + fh_r); u = hsig(fx_u + fh_u)
        c = htanh(fx_c + r * fh_c)
        out = u * h_prev + (1 - u) * c
    """
    fx = np.asarray(fx, dtype=np.float64)
    fh = np.asarray(fh, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    m = h_prev.shape[0]
    out = np.empty(m, dtype=np.float64)
    # scalar loop keeps the op order identical to the grid kernel
    for i in range(m):
        a = fx[i] + fh[i]
        bu = fx[m + i] + fh[m + i]
        r = 0.0 if a <= -3.0 else (1.0 if a >= 3.0 else a / 6.0 + 0.5)
        u = 0.0 if bu <= -3.0 else (1.0 if bu >= 3.0 else bu / 6.0 + 0.5)
        cpre = fx[2 * m + i] + r * fh[2 * m + i]
        c = -1.0 if cpre <= -1.0 else (1.0 if cpre >= 1.0 else cpre)
        out[i] = u * h_prev[i] + (1.0 - u) * c
    return out


def predict_slice(s: np.ndarray, h_prev: np.ndarray, p: ModelParams):
    """Per-pixel likelihood parameters for a slice given the previous hidden
    state.  Returns (mu_n, log_s) grids; log_s is clamped to [-7, 7].

    The fused vector is a transient: it feeds the readout and is not
    stored anywhere.
    """
    mu, logs, _, _ = _predict_full(s, h_prev, p)[:4]
    return mu, logs


def _predict_full(s: np.ndarray, h_prev: np.ndarray, p: ModelParams, fh=None):
    """predict_slice plus every intermediate the trainer needs.

    Returns (mu, logs, logs_raw, fused, fx, fh, mid, relu_mid, xpad).
    """
    x = normalize_slice(s, p.depth_bits)
    h, w = x.shape
    xpad = pad_plane(x, p.kernel // 2)
    fx = _masked_conv(xpad, p, h, w)
    if fh is None:
        fh, mid, relu_mid = _dsc(h_prev, p)
    else:
        fh, mid, relu_mid = fh
    fused = _gate(fx, fh, h_prev)
    mu, logs, logs_raw = _estimate(fused, p)
    return mu, logs, logs_raw, fused, fx, fh, mid, relu_mid, xpad


def update_hidden(s: np.ndarray, h_prev: np.ndarray, p: ModelParams, fh: np.ndarray | None = None):
    """Next hidden state from the completed slice.

    fh may be passed in to share the one-per-slice DSC computation with
    predict_slice; otherwise it is recomputed here.
    """
    x = normalize_slice(s, p.depth_bits)
    h, w = x.shape
    gx = _std_conv(pad_plane(x, p.kernel // 2), p, h, w)
    if fh is None:
        fh = _dsc(h_prev, p)[0]
    return _gate(gx, fh, h_prev)


def predict_pixel(xpad: np.ndarray, p: ModelParams, fh: np.ndarray, h_prev: np.ndarray,
                  i: int, j: int, fx_buf: np.ndarray):
    """Single-pixel prediction on the decode path (see kernels.predict_pixel)."""
    return kernels.predict_pixel(
        xpad, p.masked_w, p.masked_b, _causal_offsets(p.kernel), p.kernel // 2,
        fh, h_prev, p.est_w, p.est_b, i, j, fx_buf,
    )


__all__ = [
    "GateFeatures",
    "LOG_S_MAX",
    "LOG_S_MIN",
    "dsc_forward",
    "fusion_gate",
    "hard_sigmoid",
    "hard_tanh",
    "hidden_zeros",
    "masked_conv_forward",
    "normalize_slice",
    "pad_plane",
    "predict_pixel",
    "predict_slice",
    "standard_conv_forward",
    "update_hidden",
]

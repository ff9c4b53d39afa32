"""Row-streaming forward pass with bounded line buffers.

The batch path in model.py materializes whole padded slices.  This
module produces the same numbers row by row: the caller pushes one
(input row, previous-hidden row) pair at a time and receives prediction
rows and updated-hidden rows as soon as their receptive fields close.
Buffers hold a fixed number of rows (kernel height for the input,
depthwise height + 1 for the hidden plane), so memory does not grow
with slice height.

Row computations call the exact batch kernels on height-1 windows, so
every emitted row is bitwise identical to the corresponding row of the
batch output.  Emission schedule for arrival i: prediction row i - 2
(its gate needs hidden-feature rows through i - 2, which need hidden
rows through i) and updated-hidden row i - 3 (its full convolution
needs input rows through i).  flush() completes the tail by pushing
three virtual zero rows, which is exactly what zero padding would have
supplied.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import _causal_offsets, _full_offsets
from .params import ModelParams

__all__ = ["RowStream", "StreamedRows", "stream_slice"]


@dataclass
class StreamedRows:
    """Rows released by one push: either field may be None early on."""

    pred: "tuple[int, np.ndarray, np.ndarray] | None"
    hidden: "tuple[int, np.ndarray] | None"


class RowStream:
    """Single-slice streaming engine.

    Feed rows 0..H-1 with push(), then call flush() once.  Prediction
    rows come back as (row, mu, log_s) with shape (w,) arrays; hidden
    rows as (row, h) with shape (w, m).
    """

    def __init__(self, height: int, width: int, params: ModelParams):
        if height < 1 or width < 1:
            raise ValueError("height and width must be positive")
        self.height = height
        self.width = width
        self.params = params
        m = params.m
        k = params.kernel
        kd = params.k_dsc
        self._pad = k // 2
        self._pad_d = kd // 2
        # Input window spans rows [i - (k-1), i]; row r maps to slot
        # r - i + k - 1 so the newest row sits in the last slot.
        self._xwin = np.zeros((k, width + 2 * self._pad), dtype=np.float64)
        self._hwin = np.zeros((kd + 1, width, m), dtype=np.float64)
        self._fh_rows: deque = deque()  # (row, fh, relu_mid) pairs, <= 2 kept
        self._arrival = 0
        self._flushed = False
        self._offs_causal = _causal_offsets(k)
        self._offs_full = _full_offsets(k)
        self._offs_dw = _full_offsets(kd)
        self._scale = float(1 << params.depth_bits)

    def push(self, x_row: np.ndarray, h_prev_row: np.ndarray) -> StreamedRows:
        """Accept row self._arrival of the slice and its hidden row."""
        if self._flushed:
            raise RuntimeError("stream already flushed")
        if self._arrival >= self.height:
            raise RuntimeError("more rows pushed than the declared height")
        x_row = np.asarray(x_row)
        if x_row.shape != (self.width,):
            raise ValueError("input row has the wrong width")
        if h_prev_row.shape != (self.width, self.params.m):
            raise ValueError("hidden row has the wrong shape")
        norm = x_row.astype(np.float64) / self._scale
        return self._advance(norm, np.asarray(h_prev_row, dtype=np.float64))

    def flush(self) -> "list[StreamedRows]":
        """Push virtual zero rows until every real row has been emitted."""
        if self._flushed:
            raise RuntimeError("stream already flushed")
        if self._arrival != self.height:
            raise RuntimeError("flush before all rows were pushed")
        self._flushed = True
        zero_x = np.zeros(self.width, dtype=np.float64)
        zero_h = np.zeros((self.width, self.params.m), dtype=np.float64)
        out = []
        for _ in range(3):
            out.append(self._advance(zero_x, zero_h))
        return out

    def _advance(self, norm_row: np.ndarray, h_row: np.ndarray) -> StreamedRows:
        pad = self._pad
        i = self._arrival
        self._xwin[:-1] = self._xwin[1:]
        self._xwin[-1, :pad] = 0.0
        self._xwin[-1, pad:pad + self.width] = norm_row
        self._xwin[-1, pad + self.width:] = 0.0
        self._hwin[:-1] = self._hwin[1:]
        self._hwin[-1] = h_row
        self._arrival += 1

        pred = None
        hidden = None
        r_fh = i - 2
        if 0 <= r_fh < self.height:
            self._fh_rows.append((r_fh,) + self._fh_row())
            pred = (r_fh,) + self._pred_row(r_fh)
        r_h = i - 3
        if 0 <= r_h < self.height:
            hidden = (r_h, self._hidden_row(r_h))
            self._fh_rows.popleft()
        return StreamedRows(pred=pred, hidden=hidden)

    def _fh_row(self):
        # Depthwise window: hidden rows r-2..r+2 live in window slots
        # 1..5 when the arrival is r+2 (slot 5 holds the newest row).
        p = self.params
        m = p.m
        w = self.width
        pd = self._pad_d
        hpad = np.zeros((p.k_dsc, w + 2 * pd, m), dtype=np.float64)
        hpad[:, pd:pd + w, :] = self._hwin[1:]
        mid = np.empty((1, w, m), dtype=np.float64)
        kernels.depthwise_conv(hpad, p.dw_w, p.dw_b, self._offs_dw, pd, mid)
        relu_mid = np.empty_like(mid)
        fh = np.empty((1, w, 3 * m), dtype=np.float64)
        kernels.pointwise_relu(mid, p.pw_w, p.pw_b, relu_mid, fh)
        return fh[0], relu_mid[0]

    def _pred_row(self, r: int):
        # Masked taps only reach rows <= r; the newest buffered row is
        # r + 2, so the 7-row window is the buffer shifted up one slot
        # with a zero row appended (row r + 3 is never read).
        p = self.params
        w = self.width
        k = p.kernel
        pad = self._pad
        xwin = np.zeros((k, w + 2 * pad), dtype=np.float64)
        xwin[:-1] = self._xwin[1:]
        fx = np.empty((1, w, 3 * p.m), dtype=np.float64)
        kernels.conv_taps(xwin, p.masked_w, p.masked_b, self._offs_causal, pad, fx)
        row, fh, _ = self._fh_rows[-1]
        assert row == r
        h_row = self._hwin[3][None]  # slot for row r when arrival is r+2
        fused = np.empty((1, w, p.m), dtype=np.float64)
        kernels.gate_grid(fx, fh[None], h_row, fused)
        mu = np.empty((1, w), dtype=np.float64)
        log_s = np.empty((1, w), dtype=np.float64)
        logs_raw = np.empty((1, w), dtype=np.float64)
        kernels.estimate_grid(fused, p.est_w, p.est_b, mu, log_s, logs_raw)
        return mu[0], log_s[0]

    def _hidden_row(self, r: int) -> np.ndarray:
        # Full conv on rows r-3..r+3 = the whole input window at
        # arrival r + 3.
        p = self.params
        w = self.width
        gx = np.empty((1, w, 3 * p.m), dtype=np.float64)
        kernels.conv_taps(self._xwin, p.std_w, p.std_b, self._offs_full,
                          self._pad, gx)
        row, fh, _ = self._fh_rows[0]
        assert row == r
        h_row = self._hwin[2][None]  # slot for row r when arrival is r+3
        out = np.empty((1, w, p.m), dtype=np.float64)
        kernels.gate_grid(gx, fh[None], h_row, out)
        return out[0]


def stream_slice(slice_samples: np.ndarray, h_prev: np.ndarray,
                 params: ModelParams):
    """Run one slice through RowStream and reassemble full planes.

    Returns (mu, log_s, h_new), each bitwise identical to the batch
    functions in model.py.
    """
    height, width = slice_samples.shape
    eng = RowStream(height, width, params)
    mu = np.empty((height, width), dtype=np.float64)
    log_s = np.empty((height, width), dtype=np.float64)
    h_new = np.empty((height, width, params.m), dtype=np.float64)
    emitted = []
    for i in range(height):
        emitted.append(eng.push(slice_samples[i], h_prev[i]))
    emitted.extend(eng.flush())
    seen_pred = 0
    seen_hidden = 0
    for ev in emitted:
        if ev.pred is not None:
            r, mu_r, ls_r = ev.pred
            mu[r] = mu_r
            log_s[r] = ls_r
            seen_pred += 1
        if ev.hidden is not None:
            r, h_r = ev.hidden
            h_new[r] = h_r
            seen_hidden += 1
    if seen_pred != height or seen_hidden != height:
        raise RuntimeError("stream did not emit every row")
    return mu, log_s, h_new

"""Variable-scale discrete logistic likelihood.

A sample x in [0, 2**D) is scored against a logistic distribution with
location mu_n and scale s = exp(log_s) in the normalized domain
x_n = (x / 2**D) * L, where L is the scaling factor (1 for 8-bit data,
8 for deeper).  The probability of x is the CDF mass of its half-open
bin of radius b = (0.5 / 2**D) * L, with the outermost bins extended to
the full tails so the distribution sums to exactly one:

    p(x) = CDF(x_n + b) - CDF(x_n - b)
    p(0):        lower term replaced by 0
    p(2**D - 1): upper term replaced by 1

The real-valued functions here (discrete_prob, nll_bits and its
gradient) serve training and codelength bounds and are free to use
numerically stable log-space forms.  The integer-grid functions the
codec relies on (quantize_interval, locate_symbol) are thin wrappers
over the shared kernels so encoder and decoder arithmetic is identical.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .kernels import GRID, GRID_BITS, LOG_S_MAX, LOG_S_MIN

_LN2 = float(np.log(2.0))


def normalize(x, depth_bits: int, scale_l: float):
    """Map sample values into the likelihood domain: (x / 2**D) * L."""
    return (np.asarray(x, dtype=np.float64) / float(1 << depth_bits)) * scale_l


def bin_radius(depth_bits: int, scale_l: float) -> float:
    """Half-width of one sample bin in the normalized domain."""
    return (0.5 / float(1 << depth_bits)) * scale_l


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def _log1mexp(d):
    """log(1 - exp(-d)) for d > 0, stable over the whole range."""
    d = np.asarray(d, dtype=np.float64)
    small = d <= _LN2
    out = np.empty_like(d)
    out[small] = np.log(-np.expm1(-d[small]))
    out[~small] = np.log1p(-np.exp(-d[~small]))
    return out


def _edges(x, mu, log_s, depth_bits, scale_l):
    """Standardized bin edges (u_lo, u_hi) and the bin width d in s units."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    log_s = np.asarray(log_s, dtype=np.float64)
    s = np.exp(log_s)
    xn = normalize(x, depth_bits, scale_l)
    b = bin_radius(depth_bits, scale_l)
    u_hi = (xn + b - mu) / s
    u_lo = (xn - b - mu) / s
    return u_lo, u_hi, (2.0 * b) / s


def discrete_prob(x, mu, log_s, depth_bits: int, scale_l: float):
    """Exact bin probability p(x); tail-extended so sum over x is 1.

    Accepts scalars or broadcastable arrays.
    """
    x = np.asarray(x)
    u_lo, u_hi, _ = _edges(x, mu, log_s, depth_bits, scale_l)
    top = (1 << depth_bits) - 1
    upper = np.where(x >= top, 1.0, _sigmoid(u_hi))
    lower = np.where(x <= 0, 0.0, _sigmoid(u_lo))
    return upper - lower


def log2_prob(x, mu, log_s, depth_bits: int, scale_l: float):
    """log2 p(x), computed in log space (no underflow for sane log_s)."""
    x = np.asarray(x)
    u_lo, u_hi, d = _edges(x, mu, log_s, depth_bits, scale_l)
    top = (1 << depth_bits) - 1
    at_bottom = x <= 0
    at_top = x >= top
    interior = ~(at_bottom | at_top)
    out = np.empty(np.broadcast(u_lo, u_hi).shape, dtype=np.float64)
    # interior: log sig(u_hi) + log sig(-u_lo) + log(1 - exp(-(u_hi - u_lo)))
    out[interior] = (
        _log_sigmoid(u_hi)[interior]
        + _log_sigmoid(-u_lo)[interior]
        + _log1mexp(np.broadcast_to(d, out.shape)[interior])
    )
    out[at_bottom] = _log_sigmoid(u_hi)[at_bottom]
    out[at_top] = _log_sigmoid(-u_lo)[at_top]
    return out / _LN2


def nll_bits(s, mu, log_s, depth_bits: int, scale_l: float) -> float:
    """Total codelength bound of a slice (or any array) in bits:
    -sum log2 p(x)."""
    return float(-np.sum(log2_prob(s, mu, log_s, depth_bits, scale_l)))


def nll_grad(s, mu, log_s, depth_bits: int, scale_l: float):
    """Per-pixel gradients (d nll_bits / d mu, d nll_bits / d log_s).

    Closed forms of the stable log-space loss; every term is bounded, so
    the gradient stays finite even when the bin probability underflows.
    """
    x = np.asarray(s)
    u_lo, u_hi, d = _edges(x, mu, log_s, depth_bits, scale_l)
    scale = np.exp(np.asarray(log_s, dtype=np.float64))
    top = (1 << depth_bits) - 1
    at_bottom = x <= 0
    at_top = x >= top

    sig_neg_hi = _sigmoid(-u_hi)          # d logsig(u_hi) / du_hi
    sig_lo = _sigmoid(u_lo)               # -d logsig(-u_lo) / du_lo
    d = np.broadcast_to(d, sig_neg_hi.shape)
    with np.errstate(over="ignore"):
        width_term = d / np.expm1(d)      # -> 1 as d -> 0, -> 0 as d grows
    sig_neg_hi = np.where(at_top, 0.0, sig_neg_hi)
    sig_lo = np.where(at_bottom, 0.0, sig_lo)
    width_term = np.where(at_bottom | at_top, 0.0, width_term)

    dmu = (sig_neg_hi - sig_lo) / (scale * _LN2)
    dlogs = (u_hi * sig_neg_hi - u_lo * sig_lo + width_term) / _LN2
    return dmu, dlogs


# --- integer-grid interface used by the codec --------------------------------


def quantize_interval(x: int, mu: float, log_s: float, depth_bits: int, scale_l: float):
    """Quantized (c_lo, c_hi) on the [0, GRID] grid; escape iff c_hi <= c_lo."""
    return kernels.quantize_interval_q(int(x), float(mu), float(log_s), depth_bits, float(scale_l))


def is_escape(c_lo: int, c_hi: int) -> bool:
    return c_hi <= c_lo


def locate_symbol(f: int, mu: float, log_s: float, depth_bits: int, scale_l: float) -> int:
    """Invert the quantized CDF: the symbol whose interval contains f."""
    return int(kernels.locate_symbol_q(int(f), float(mu), float(log_s), depth_bits, float(scale_l)))


__all__ = [
    "GRID",
    "GRID_BITS",
    "LOG_S_MAX",
    "LOG_S_MIN",
    "bin_radius",
    "discrete_prob",
    "is_escape",
    "locate_symbol",
    "log2_prob",
    "nll_bits",
    "nll_grad",
    "normalize",
    "quantize_interval",
]

"""Volume compression: model-driven range coding plus the container format.

A compressed volume is a single byte string:

    offset  size  field
    0       4     magic "SRLV"
    4       1     container version (1)
    5       1     sample depth in bits (8, 12, 16)
    6       2     model width m, little-endian u16
    8       4     likelihood scale L, little-endian f32
    12      4     t (number of slices), u32
    16      4     h (rows), u32
    20      4     w (columns), u32
    24      32    SHA-256 of the canonical f32 weight serialization
    56      4     escape count, u32
    60      ...   escape table: per entry u64 flat sample index then the
                  raw sample value (u8 when depth is 8, else u16),
                  indices strictly increasing
    ...     8     payload length in bytes, u64
    ...     ...   range-coded payload

Escapes are samples whose quantized interval collapsed to zero width;
they are stored verbatim and skipped by both coder loops.  The digest
pins the exact weights: decompression refuses to run the model when the
supplied weights hash differently, since a mismatched model would
silently desynchronize the arithmetic decoder.

Encoder and decoder walk samples in (t, row, column) order with the
same float64 kernels, so the intervals they derive are identical bit
for bit, which is the property the whole stream format relies on.
"""

from __future__ import annotations

import struct

import numpy as np

from . import kernels
from .errors import (
    BadDepth,
    BadMagic,
    CorruptEscapeTable,
    CorruptStream,
    DepthMismatch,
    DigestMismatch,
    TruncatedPayload,
)
from .model import _dsc, _predict_full, hidden_zeros, predict_pixel, update_hidden
from .params import ModelParams, canonical_f32, weights_digest
from .rangecoder import RangeDecoder, RangeEncoder
from .volume import SUPPORTED_DEPTHS, Volume

__all__ = ["STREAM_MAGIC", "STREAM_VERSION", "compress_volume", "decompress_volume"]

STREAM_MAGIC = b"SRLV"
STREAM_VERSION = 1

_HEADER = struct.Struct("<4sBBHfIII32sI")


def _escape_value_format(depth_bits: int) -> struct.Struct:
    return struct.Struct("<QB" if depth_bits == 8 else "<QH")


def compress_volume(vol: Volume, params: ModelParams,
                    zero_hidden: bool = False) -> bytes:
    """Compress a volume under the given weights; returns the container bytes.

    zero_hidden replaces the recurrent state with zeros before every
    slice (an ablation and diagnostic mode); the decoder must be called
    with the same flag.
    """
    if vol.depth_bits != params.depth_bits:
        raise DepthMismatch(
            f"volume depth {vol.depth_bits} != model depth {params.depth_bits}"
        )
    p = canonical_f32(params)
    digest = weights_digest(p)
    depth = p.depth_bits
    scale_l = p.scale_l
    t, h, w = vol.t, vol.h, vol.w

    enc = RangeEncoder()
    escapes = []
    esc_fmt = _escape_value_format(depth)
    hid = hidden_zeros(h, w, p.m)
    fh_zero = _dsc(hid, p) if zero_hidden else None
    lo = np.empty((h, w), dtype=np.int64)
    hi = np.empty((h, w), dtype=np.int64)
    for ti in range(t):
        s = vol.samples[ti]
        fh3 = fh_zero if zero_hidden else _dsc(hid, p)
        mu, logs = _predict_full(s, hid, p, fh=fh3)[:2]
        kernels.quantize_slice(s, mu, logs, depth, scale_l, lo, hi)
        lo_flat = lo.ravel().tolist()
        hi_flat = hi.ravel().tolist()
        vals = s.ravel()
        base = ti * h * w
        for k in range(h * w):
            c_lo = lo_flat[k]
            c_hi = hi_flat[k]
            if c_hi <= c_lo:
                escapes.append((base + k, int(vals[k])))
            else:
                enc.encode(c_lo, c_hi)
        if not zero_hidden:
            hid = update_hidden(s, hid, p, fh=fh3[0])
    payload = enc.finish()

    parts = [
        _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, depth, p.m,
                     scale_l, t, h, w, digest, len(escapes)),
    ]
    parts.extend(esc_fmt.pack(idx, val) for idx, val in escapes)
    parts.append(struct.pack("<Q", len(payload)))
    parts.append(payload)
    return b"".join(parts)


def decompress_volume(data: bytes, params: ModelParams,
                      zero_hidden: bool = False) -> Volume:
    """Invert compress_volume; the weights must hash to the stored digest."""
    if len(data) < _HEADER.size:
        raise TruncatedPayload("container shorter than its fixed header")
    (magic, version, depth, m, scale_l, t, h, w,
     digest, n_esc) = _HEADER.unpack_from(data, 0)
    if magic != STREAM_MAGIC:
        raise BadMagic(f"expected {STREAM_MAGIC!r}, found {magic!r}")
    if version != STREAM_VERSION:
        raise CorruptStream(f"unsupported container version {version}")
    if depth not in SUPPORTED_DEPTHS:
        raise BadDepth(f"unsupported sample depth {depth}")
    if t < 1 or h < 1 or w < 1:
        raise CorruptStream("container declares an empty volume")
    p = canonical_f32(params)
    if weights_digest(p) != digest:
        # Covers any weight disparity, including depth: the digest is
        # taken over the serialized weights, header fields included.
        raise DigestMismatch("weights do not match the stream's digest")
    if depth != params.depth_bits:
        raise DepthMismatch(
            f"stream depth {depth} != model depth {params.depth_bits}"
        )
    if m != p.m or scale_l != p.scale_l:
        raise CorruptStream("header model fields disagree with the weights")

    esc_fmt = _escape_value_format(depth)
    pos = _HEADER.size
    total = t * h * w
    if n_esc > total:
        raise CorruptEscapeTable("more escapes than samples")
    need = n_esc * esc_fmt.size
    if len(data) - pos < need:
        raise TruncatedPayload("escape table extends past the container")
    esc_idx = np.empty(n_esc, dtype=np.int64)
    esc_val = np.empty(n_esc, dtype=np.int64)
    prev = -1
    for k in range(n_esc):
        idx, val = esc_fmt.unpack_from(data, pos)
        pos += esc_fmt.size
        if idx <= prev or idx >= total:
            raise CorruptEscapeTable("escape indices must be strictly "
                                     "increasing and in range")
        if val >= (1 << depth):
            raise CorruptEscapeTable("escape value out of range")
        esc_idx[k] = idx
        esc_val[k] = val
        prev = idx
    if len(data) - pos < 8:
        raise TruncatedPayload("missing payload length")
    (payload_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) - pos < payload_len:
        raise TruncatedPayload("payload shorter than its declared length")
    if len(data) - pos > payload_len:
        raise CorruptStream("trailing bytes after the payload")
    payload = memoryview(data)[pos:pos + payload_len]

    n_coded = total - n_esc
    dec = RangeDecoder(payload) if n_coded else None

    out = np.zeros((t, h, w), dtype=np.uint16)
    pad = p.kernel // 2
    denom = float(1 << depth)
    hid = hidden_zeros(h, w, p.m)
    fh_zero = _dsc(hid, p) if zero_hidden else None
    xpad = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.float64)
    fx_buf = np.empty(3 * p.m, dtype=np.float64)
    e = 0
    for ti in range(t):
        fh3 = fh_zero if zero_hidden else _dsc(hid, p)
        fh = fh3[0]
        xpad[:] = 0.0
        base = ti * h * w
        flat = base
        for i in range(h):
            for j in range(w):
                if e < n_esc and esc_idx[e] == flat:
                    v = int(esc_val[e])
                    e += 1
                else:
                    mu, ls = predict_pixel(xpad, p, fh, hid, i, j, fx_buf)
                    f = dec.decode_target()
                    v = int(kernels.locate_symbol_q(f, mu, ls, depth, scale_l))
                    c_lo, c_hi = kernels.quantize_interval_q(
                        v, mu, ls, depth, scale_l)
                    dec.decode_update(c_lo, c_hi)
                out[ti, i, j] = v
                xpad[i + pad, j + pad] = v / denom
                flat += 1
        if not zero_hidden:
            hid = update_hidden(out[ti], hid, p, fh=fh)
    if dec is not None and dec.bytes_consumed != payload_len:
        raise CorruptStream("payload length disagrees with the decoded "
                            "symbol stream")
    return Volume(depth_bits=depth, samples=out)

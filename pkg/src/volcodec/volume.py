"""Volumetric image container and generators.

A volume is a stack of T slices of H x W unsigned samples at a bit depth
of 8, 12, or 16.  The on-disk container ("RVF1") is deliberately minimal:

    magic "RVF1" | depth_bits u8 | t u32 | h u32 | w u32 | samples

with all integers little-endian and samples stored slice-major in raster
order, one byte per sample for depth 8 and two bytes otherwise.  The
header is exactly 17 bytes.

Also provides a P5 (binary PGM) stack importer and deterministic
synthetic volume generators used by tests and experiments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadDepth,
    BadMagic,
    CorruptStream,
    DimensionMismatch,
    SampleOutOfRange,
    TruncatedPayload,
    UnsupportedFormat,
)

RVF_MAGIC = b"RVF1"
RVF_HEADER_LEN = 17
SUPPORTED_DEPTHS = (8, 12, 16)


@dataclass
class Volume:
    """A T x H x W stack of unsigned integer samples.

    samples is always a C-contiguous uint16 array of shape (t, h, w);
    8-bit volumes simply never use the high byte.
    """

    depth_bits: int
    samples: np.ndarray

    def __post_init__(self):
        if self.depth_bits not in SUPPORTED_DEPTHS:
            raise BadDepth(f"depth_bits must be one of {SUPPORTED_DEPTHS}, got {self.depth_bits}")
        arr = np.ascontiguousarray(self.samples, dtype=np.uint16)
        if arr.ndim != 3:
            raise DimensionMismatch(f"samples must be (t, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"all dimensions must be >= 1, got {arr.shape}")
        if arr.size and int(arr.max()) >= (1 << self.depth_bits):
            raise SampleOutOfRange(
                f"sample {int(arr.max())} does not fit in {self.depth_bits} bits"
            )
        self.samples = arr

    @property
    def t(self) -> int:
        return self.samples.shape[0]

    @property
    def h(self) -> int:
        return self.samples.shape[1]

    @property
    def w(self) -> int:
        return self.samples.shape[2]

    @property
    def num_samples(self) -> int:
        return self.samples.size


def write_rvf(v: Volume) -> bytes:
    """Serialize a volume to RVF1 bytes."""
    header = RVF_MAGIC + struct.pack("<BIII", v.depth_bits, v.t, v.h, v.w)
    if v.depth_bits == 8:
        payload = v.samples.astype("<u1").tobytes(order="C")
    else:
        payload = v.samples.astype("<u2").tobytes(order="C")
    return header + payload


def read_rvf(data: bytes) -> Volume:
    """Parse RVF1 bytes back into a Volume.

    Raises BadMagic / BadDepth / TruncatedPayload / SampleOutOfRange on
    malformed input.
    """
    if len(data) < RVF_HEADER_LEN:
        if data[:4] != RVF_MAGIC:
            raise BadMagic("not an RVF1 file")
        raise TruncatedPayload("RVF1 header truncated")
    if data[:4] != RVF_MAGIC:
        raise BadMagic("not an RVF1 file")
    depth, t, h, w = struct.unpack_from("<BIII", data, 4)
    if depth not in SUPPORTED_DEPTHS:
        raise BadDepth(f"unsupported depth {depth}")
    if min(t, h, w) < 1:
        raise CorruptStream(f"zero dimension in header: {(t, h, w)}")
    n = t * h * w
    sample_bytes = 1 if depth == 8 else 2
    expected = RVF_HEADER_LEN + n * sample_bytes
    if len(data) < expected:
        raise TruncatedPayload(f"need {expected} bytes, have {len(data)}")
    raw = data[RVF_HEADER_LEN:expected]
    if depth == 8:
        samples = np.frombuffer(raw, dtype="<u1").astype(np.uint16)
    else:
        samples = np.frombuffer(raw, dtype="<u2").astype(np.uint16)
        if depth == 12 and samples.size and int(samples.max()) >= 4096:
            raise SampleOutOfRange(
                f"12-bit volume contains sample {int(samples.max())}"
            )
    return Volume(depth_bits=depth, samples=samples.reshape(t, h, w))


def write_rvf_file(v: Volume, path) -> None:
    with open(path, "wb") as f:
        f.write(write_rvf(v))


def read_rvf_file(path) -> Volume:
    with open(path, "rb") as f:
        return read_rvf(f.read())


# --- PGM import ---------------------------------------------------------------


def _parse_pgm(data: bytes):
    """Parse one binary PGM (P5), returning (h, w, maxval, samples uint16)."""
    if data[:2] != b"P5":
        raise UnsupportedFormat("only binary PGM (P5) is supported")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise TruncatedPayload("PGM header truncated")
        c = data[pos]
        if c == ord("#"):
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        elif c in b" \t\r\n":
            pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos] not in b" \t\r\n#":
                pos += 1
            fields.append(data[start:pos])
    if pos >= len(data):
        raise TruncatedPayload("PGM payload missing")
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise UnsupportedFormat(f"bad PGM header field: {e}") from None
    if not (1 <= maxval <= 65535):
        raise UnsupportedFormat(f"PGM maxval {maxval} out of range")
    n = h * w
    if maxval < 256:
        raw = data[pos : pos + n]
        if len(raw) < n:
            raise TruncatedPayload("PGM payload truncated")
        samples = np.frombuffer(raw, dtype=np.uint8).astype(np.uint16)
    else:
        raw = data[pos : pos + 2 * n]
        if len(raw) < 2 * n:
            raise TruncatedPayload("PGM payload truncated")
        samples = np.frombuffer(raw, dtype=">u2").astype(np.uint16)
    return h, w, maxval, samples.reshape(h, w)


def import_pgm_stack(paths) -> Volume:
    """Read a list of P5 files as one volume, slice order = list order.

    All slices must agree on dimensions and maxval (DimensionMismatch
    otherwise).  Depth is inferred: maxval < 256 -> 8 bits, else 16.
    """
    paths = list(paths)
    if not paths:
        raise DimensionMismatch("empty PGM stack")
    slices = []
    shape = None
    maxval0 = None
    for p in paths:
        with open(p, "rb") as f:
            h, w, maxval, arr = _parse_pgm(f.read())
        if shape is None:
            shape, maxval0 = (h, w), maxval
        elif (h, w) != shape:
            raise DimensionMismatch(f"{p}: slice is {h}x{w}, stack is {shape[0]}x{shape[1]}")
        elif maxval != maxval0:
            raise DimensionMismatch(f"{p}: maxval {maxval} != stack maxval {maxval0}")
        slices.append(arr)
    depth = 8 if maxval0 < 256 else 16
    return Volume(depth_bits=depth, samples=np.stack(slices, axis=0))


# --- synthetic volumes ---------------------------------------------------------

SYNTH_KINDS = ("constant", "noise", "smooth3d")

# Relative amplitudes of the three separable sinusoid components of
# smooth3d, as fractions of the full sample range.
_SMOOTH_AMPLITUDES = (0.22, 0.13, 0.08)

# Frequency ranges in cycles per sample step.  The temporal range is kept
# far below the in-plane range on purpose: consecutive slices then differ
# by a tiny envelope drift (strong inter-slice correlation), while the
# spatial pattern itself varies from volume to volume, so the previous
# slice is a much better predictor of a pixel than its in-slice
# neighbourhood.  The temporal factor is a biased sinusoid staying in
# [0.5, 1] so no component fades out or flips sign mid-volume.
_SMOOTH_FREQ_T = (0.002, 0.01)
_SMOOTH_FREQ_PLANE = (0.12, 0.38)


def synth_volume(kind: str, t: int, h: int, w: int, depth_bits: int, seed: int) -> Volume:
    """Deterministic synthetic volume.

    kinds:
      constant  every sample is 2**(depth_bits - 1)
      noise     i.i.d. uniform over the full sample range
      smooth3d  sum of three separable sinusoids plus uniform noise of
                amplitude 2**(depth_bits - 6); the temporal frequency is
                kept very low so consecutive slices stay strongly
                correlated while the in-plane texture stays non-trivial
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synth kind {kind!r}, expected one of {SYNTH_KINDS}")
    if depth_bits not in SUPPORTED_DEPTHS:
        raise BadDepth(f"depth_bits must be one of {SUPPORTED_DEPTHS}, got {depth_bits}")
    if min(t, h, w) < 1:
        raise DimensionMismatch(f"all dimensions must be >= 1, got {(t, h, w)}")
    top = (1 << depth_bits) - 1
    rng = np.random.default_rng(seed)
    if kind == "constant":
        samples = np.full((t, h, w), 1 << (depth_bits - 1), dtype=np.uint16)
        return Volume(depth_bits=depth_bits, samples=samples)
    if kind == "noise":
        samples = rng.integers(0, 1 << depth_bits, size=(t, h, w), dtype=np.uint16)
        return Volume(depth_bits=depth_bits, samples=samples)

    # smooth3d
    full = float(1 << depth_bits)
    tt = np.arange(t, dtype=np.float64)[:, None, None]
    ii = np.arange(h, dtype=np.float64)[None, :, None]
    jj = np.arange(w, dtype=np.float64)[None, None, :]
    base = np.zeros((t, h, w), dtype=np.float64)
    for amp in _SMOOTH_AMPLITUDES:
        f_t = rng.uniform(*_SMOOTH_FREQ_T)
        f_i = rng.uniform(*_SMOOTH_FREQ_PLANE)
        f_j = rng.uniform(*_SMOOTH_FREQ_PLANE)
        p_t, p_i, p_j = rng.uniform(0.0, 1.0, size=3)
        envelope = 0.75 + 0.25 * np.sin(2.0 * np.pi * (f_t * tt + p_t))
        base += (
            amp
            * full
            * envelope
            * np.sin(2.0 * np.pi * (f_i * ii + p_i))
            * np.sin(2.0 * np.pi * (f_j * jj + p_j))
        )
    noise_amp = float(1 << (depth_bits - 6))
    noise = rng.uniform(-0.5 * noise_amp, 0.5 * noise_amp, size=(t, h, w))
    values = (1 << (depth_bits - 1)) + base + noise
    samples = np.clip(np.rint(values), 0, top).astype(np.uint16)
    return Volume(depth_bits=depth_bits, samples=samples)


def bpp(num_bytes: int, dims) -> float:
    """Bits per pixel of a num_bytes-long artifact covering dims samples.

    dims may be a Volume or a (t, h, w) tuple.  The entire artifact
    (headers, escape table, payload) is counted; weights are not.
    """
    if isinstance(dims, Volume):
        n = dims.num_samples
    else:
        t, h, w = dims
        n = t * h * w
    if n < 1:
        raise DimensionMismatch("bpp undefined for empty volume")
    return 8.0 * num_bytes / float(n)

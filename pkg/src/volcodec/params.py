"""Model parameters: layout, initialization, quantization, serialization.

The parameter set is deliberately tiny (3*M**2 + 256*M + 2 values for the
default 7x7 kernel and 5x5 depthwise kernel; 4866 at M = 16) and lives in
five weight/bias pairs, serialized in one canonical order:

    masked_w, masked_b, std_w, std_b, dw_w, dw_b, pw_w, pw_b, est_w, est_b

The on-disk container ("SRLW") stores that order row-major little-endian
as f32 (dtype 0) or f16 (dtype 1) behind a 21-byte header:

    magic "SRLW" | version u8 | dtype u8 | m u16 | kernel u16 | k_dsc u16 |
    depth_bits u8 | scale_l f32 | parameter_count u32

The stream digest is the SHA-256 of the canonical f32 SRLW bytes, so two
parameter sets pair with the same stream exactly when their canonical
serializations are byte-identical.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadDepth, BadMagic, CorruptStream, CountMismatch, TruncatedPayload

WEIGHTS_MAGIC = b"SRLW"
WEIGHTS_VERSION = 1
SRLW_HEADER_LEN = 21

DTYPE_F32 = 0
DTYPE_F16 = 1

DEFAULT_M = 16
DEFAULT_KERNEL = 7
DEFAULT_K_DSC = 5

# (attribute, is_bias) in canonical serialization order
TENSOR_ORDER = (
    ("masked_w", False),
    ("masked_b", True),
    ("std_w", False),
    ("std_b", True),
    ("dw_w", False),
    ("dw_b", True),
    ("pw_w", False),
    ("pw_b", True),
    ("est_w", False),
    ("est_b", True),
)


def _tensor_shapes(m: int, kernel: int, k_dsc: int) -> dict:
    n_causal = (kernel * kernel - 1) // 2
    return {
        "masked_w": (3 * m, n_causal),
        "masked_b": (3 * m,),
        "std_w": (3 * m, kernel * kernel),
        "std_b": (3 * m,),
        "dw_w": (m, k_dsc * k_dsc),
        "dw_b": (m,),
        "pw_w": (3 * m, m),
        "pw_b": (3 * m,),
        "est_w": (2, m),
        "est_b": (2,),
    }


@dataclass
class ModelParams:
    """All learnable tensors plus the hyperparameters they were built for.

    Arrays are float64 in memory; persisted files are f32/f16.  scale_l is
    the likelihood scaling factor the weights were trained with.
    """

    m: int
    kernel: int
    k_dsc: int
    depth_bits: int
    scale_l: float
    masked_w: np.ndarray
    masked_b: np.ndarray
    std_w: np.ndarray
    std_b: np.ndarray
    dw_w: np.ndarray
    dw_b: np.ndarray
    pw_w: np.ndarray
    pw_b: np.ndarray
    est_w: np.ndarray
    est_b: np.ndarray

    def __post_init__(self):
        shapes = _tensor_shapes(self.m, self.kernel, self.k_dsc)
        for name, _ in TENSOR_ORDER:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: expected shape {shapes[name]}, got {arr.shape}")
            setattr(self, name, arr)
        self.scale_l = float(self.scale_l)

    def tensors(self):
        """Tensors in canonical order."""
        return [getattr(self, name) for name, _ in TENSOR_ORDER]


def parameter_count(p: ModelParams) -> int:
    """Exact number of learnable scalars (weights and biases)."""
    return sum(t.size for t in p.tensors())


def default_scale_l(depth_bits: int) -> float:
    """Likelihood scaling factor by depth: 1 for 8-bit data, 8 for deeper."""
    return 1.0 if depth_bits <= 8 else 8.0


def init_params(
    m: int = DEFAULT_M,
    depth_bits: int = 8,
    scale_l: float | None = None,
    seed: int = 0,
    kernel: int = DEFAULT_KERNEL,
    k_dsc: int = DEFAULT_K_DSC,
) -> ModelParams:
    """Seeded initialization: weights uniform in [-a, a] with a = sqrt(1/fan_in)
    per tensor, biases zero.

    Values are rounded through float32 so a fresh parameter set
    round-trips bitwise through the f32 weights file.
    """
    if scale_l is None:
        scale_l = default_scale_l(depth_bits)
    rng = np.random.default_rng(seed)
    shapes = _tensor_shapes(m, kernel, k_dsc)
    fan_in = {
        "masked_w": (kernel * kernel - 1) // 2,
        "std_w": kernel * kernel,
        "dw_w": k_dsc * k_dsc,
        "pw_w": m,
        "est_w": m,
    }
    fields = {}
    for name, is_bias in TENSOR_ORDER:
        if is_bias:
            fields[name] = np.zeros(shapes[name], dtype=np.float64)
        else:
            a = np.sqrt(1.0 / fan_in[name])
            draw = rng.uniform(-a, a, size=shapes[name])
            fields[name] = draw.astype(np.float32).astype(np.float64)
    return ModelParams(
        m=m, kernel=kernel, k_dsc=k_dsc, depth_bits=depth_bits,
        scale_l=float(np.float32(scale_l)), **fields,
    )


def _round_through(p: ModelParams, dtype) -> ModelParams:
    fields = {
        name: getattr(p, name).astype(dtype).astype(np.float64)
        for name, _ in TENSOR_ORDER
    }
    return replace(p, scale_l=float(np.float32(p.scale_l)), **fields)


def canonical_f32(p: ModelParams) -> ModelParams:
    """Round every tensor through float32 (the persisted precision)."""
    return _round_through(p, np.float32)


def quantize_weights_f16(p: ModelParams) -> ModelParams:
    """Round every tensor to the nearest IEEE binary16 value (kept as float64).

    Idempotent; f16 values are exactly representable in f32/f64, so a
    quantized set is also f32-canonical.
    """
    return _round_through(p, np.float16)


def srlw_bytes(p: ModelParams, dtype: int = DTYPE_F32) -> bytes:
    """Serialize parameters to SRLW bytes with the given storage dtype."""
    if dtype not in (DTYPE_F32, DTYPE_F16):
        raise ValueError(f"unknown SRLW dtype {dtype}")
    header = WEIGHTS_MAGIC + struct.pack(
        "<BBHHHBfI",
        WEIGHTS_VERSION,
        dtype,
        p.m,
        p.kernel,
        p.k_dsc,
        p.depth_bits,
        np.float32(p.scale_l),
        parameter_count(p),
    )
    np_dtype = "<f4" if dtype == DTYPE_F32 else "<f2"
    body = b"".join(t.astype(np_dtype).tobytes(order="C") for t in p.tensors())
    return header + body


def parse_srlw(data: bytes) -> ModelParams:
    """Parse SRLW bytes; values are widened to float64."""
    if data[:4] != WEIGHTS_MAGIC:
        raise BadMagic("not an SRLW weights file")
    if len(data) < SRLW_HEADER_LEN:
        raise TruncatedPayload("SRLW header truncated")
    version, dtype, m, kernel, k_dsc, depth, scale_l, count = struct.unpack_from(
        "<BBHHHBfI", data, 4
    )
    if version != WEIGHTS_VERSION:
        raise CorruptStream(f"unsupported SRLW version {version}")
    if dtype not in (DTYPE_F32, DTYPE_F16):
        raise CorruptStream(f"unknown SRLW dtype {dtype}")
    if depth not in (8, 12, 16):
        raise BadDepth(f"unsupported depth {depth} in weights file")
    shapes = _tensor_shapes(m, kernel, k_dsc)
    expected_count = sum(int(np.prod(s)) for s in shapes.values())
    if count != expected_count:
        raise CountMismatch(
            f"header says {count} parameters, architecture implies {expected_count}"
        )
    np_dtype = np.dtype("<f4") if dtype == DTYPE_F32 else np.dtype("<f2")
    body = data[SRLW_HEADER_LEN:]
    if len(body) < count * np_dtype.itemsize:
        raise TruncatedPayload("SRLW tensor data truncated")
    fields = {}
    pos = 0
    for name, _ in TENSOR_ORDER:
        shape = shapes[name]
        n = int(np.prod(shape))
        chunk = np.frombuffer(body, dtype=np_dtype, count=n, offset=pos)
        fields[name] = chunk.astype(np.float64).reshape(shape)
        pos += n * np_dtype.itemsize
    return ModelParams(
        m=m, kernel=kernel, k_dsc=k_dsc, depth_bits=depth,
        scale_l=float(np.float32(scale_l)), **fields,
    )


def weights_digest(p: ModelParams) -> bytes:
    """SHA-256 over the canonical f32 SRLW serialization (32 bytes)."""
    return hashlib.sha256(srlw_bytes(canonical_f32(p), DTYPE_F32)).digest()


def save_weights(p: ModelParams, path, dtype: int = DTYPE_F32) -> None:
    with open(path, "wb") as f:
        f.write(srlw_bytes(p, dtype))


def load_weights(path) -> ModelParams:
    with open(path, "rb") as f:
        return parse_srlw(f.read())

"""Lossless compression of volumetric images.

A small gated-recurrent convolutional model predicts each sample's
discrete logistic likelihood in raster order; a range coder turns those
likelihoods into a compact bitstream.  Encoding and decoding share
bit-exact float64 kernels, so the compressed stream decodes losslessly
with the same weights on any platform.

Quick use:

    from volcodec import synth_volume, init_params, compress_volume, decompress_volume

    vol = synth_volume("smooth3d", 8, 64, 64, 8, seed=1)
    p = init_params(depth_bits=8)
    blob = compress_volume(vol, p)
    assert decompress_volume(blob, p).samples.tolist() == vol.samples.tolist()

Train with volcodec.training.train or the `volcodec train` command.
"""

from .codec import STREAM_MAGIC, STREAM_VERSION, compress_volume, decompress_volume
from .errors import (
    BadDepth,
    BadMagic,
    ConfigError,
    CorruptEscapeTable,
    CorruptStream,
    CountMismatch,
    DepthMismatch,
    DigestMismatch,
    DimensionMismatch,
    InvalidInterval,
    NonFiniteLoss,
    SampleOutOfRange,
    TruncatedPayload,
    UnsupportedFormat,
    VolcodecError,
)
from .logistic import discrete_prob, log2_prob, nll_bits
from .model import (
    dsc_forward,
    fusion_gate,
    hidden_zeros,
    masked_conv_forward,
    predict_slice,
    standard_conv_forward,
    update_hidden,
)
from .params import (
    ModelParams,
    canonical_f32,
    default_scale_l,
    init_params,
    load_weights,
    parameter_count,
    quantize_weights_f16,
    save_weights,
    weights_digest,
)
from .rangecoder import RangeDecoder, RangeEncoder
from .streaming import RowStream, stream_slice
from .training import (
    TrainConfig,
    adam_step,
    evaluate,
    forward_backward_window,
    grad_check,
    train,
)
from .volume import (
    Volume,
    bpp,
    import_pgm_stack,
    read_rvf,
    read_rvf_file,
    synth_volume,
    write_rvf,
    write_rvf_file,
)

__version__ = "0.1.0"

__all__ = [
    "BadDepth",
    "BadMagic",
    "ConfigError",
    "CorruptEscapeTable",
    "CorruptStream",
    "CountMismatch",
    "DepthMismatch",
    "DigestMismatch",
    "DimensionMismatch",
    "InvalidInterval",
    "ModelParams",
    "NonFiniteLoss",
    "RangeDecoder",
    "RangeEncoder",
    "RowStream",
    "STREAM_MAGIC",
    "STREAM_VERSION",
    "SampleOutOfRange",
    "TrainConfig",
    "TruncatedPayload",
    "UnsupportedFormat",
    "Volume",
    "VolcodecError",
    "adam_step",
    "bpp",
    "canonical_f32",
    "compress_volume",
    "decompress_volume",
    "default_scale_l",
    "discrete_prob",
    "dsc_forward",
    "evaluate",
    "forward_backward_window",
    "fusion_gate",
    "grad_check",
    "hidden_zeros",
    "import_pgm_stack",
    "init_params",
    "load_weights",
    "log2_prob",
    "masked_conv_forward",
    "nll_bits",
    "parameter_count",
    "predict_slice",
    "quantize_weights_f16",
    "read_rvf",
    "read_rvf_file",
    "save_weights",
    "standard_conv_forward",
    "stream_slice",
    "synth_volume",
    "train",
    "update_hidden",
    "weights_digest",
    "write_rvf",
    "write_rvf_file",
]

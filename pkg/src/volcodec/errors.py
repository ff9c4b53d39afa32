"""Exception types shared across the codec.

Every error that crosses a module boundary is defined here so callers
(and the CLI exit-code mapping) have a single place to look.
"""


class VolcodecError(Exception):
    """Base class for all package errors."""


class ConfigError(VolcodecError):
    """Bad or unknown configuration key/value."""


# --- volume container / image import ---------------------------------------

class BadMagic(VolcodecError):
    """File does not start with the expected magic bytes."""


class BadDepth(VolcodecError):
    """Depth value outside the supported set {8, 12, 16}."""


class TruncatedPayload(VolcodecError):
    """Byte source ended before the declared payload was complete."""


class SampleOutOfRange(VolcodecError):
    """A sample value does not fit in the declared bit depth."""


class DimensionMismatch(VolcodecError):
    """Slices of a stack disagree on dimensions or maxval."""


class UnsupportedFormat(VolcodecError):
    """Input image is not in a format this package reads."""


# --- model / weights --------------------------------------------------------

class CountMismatch(VolcodecError):
    """Stored parameter count disagrees with the architecture fields."""


# --- entropy coding / bitstream ---------------------------------------------

class InvalidInterval(VolcodecError):
    """Attempt to encode an empty or inverted coder interval."""


class DepthMismatch(VolcodecError):
    """Volume depth disagrees with the model's configured depth."""


class DigestMismatch(VolcodecError):
    """Stream was produced with different weights than supplied."""


class CorruptEscapeTable(VolcodecError):
    """Escape table indices/values fail their structural invariants."""


class CorruptStream(VolcodecError):
    """Compressed stream violates the container contract."""


# --- training ----------------------------------------------------------------

class NonFiniteLoss(VolcodecError):
    """A loss or gradient evaluated to NaN/Inf; aborts training."""

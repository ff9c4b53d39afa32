"""Byte-renormalizing range coder with carry counting.

Intervals come from a 16-bit cumulative grid: a symbol occupies
[c_lo, c_hi) within [0, 65536).  The encoder keeps a 64-bit low
accumulator and a 32-bit range; when the range drops below 2**24 it
ships the top byte of low.  A byte whose value is still undecided
(0xFF with no carry resolved) is held as a pending count; a later carry
turns the cached byte +1 and the pending run into 0x00s.  finish() pads
with at most five shift operations, so a stream of n renormalizations
occupies exactly n + 4 bytes and the decoder — which preloads 4 bytes
and reads one per renormalization — consumes it exactly.

Encoder and decoder renormalize on the same schedule (range depends
only on the interval sequence), which is what makes the byte counts
line up structurally.
"""

from __future__ import annotations

from .errors import InvalidInterval, TruncatedPayload
from .kernels import GRID, GRID_BITS

_MASK32 = 0xFFFFFFFF
_RENORM = 1 << 24


class RangeEncoder:
    """Streaming encoder over quantized [c_lo, c_hi) intervals."""

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._started = False
        self._pending = 0
        self._out = bytearray()
        self._finished = False

    def encode(self, c_lo: int, c_hi: int) -> None:
        """Narrow the interval to [c_lo, c_hi) on the 16-bit grid."""
        if self._finished:
            raise RuntimeError("encoder already finished")
        if not (0 <= c_lo < c_hi <= GRID):
            raise InvalidInterval(f"bad interval [{c_lo}, {c_hi})")
        r = self._range >> GRID_BITS
        self._low += r * c_lo
        self._range = r * (c_hi - c_lo)
        while self._range < _RENORM:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32

    def _shift_low(self) -> None:
        low = self._low
        if low > _MASK32 or low < 0xFF000000:
            carry = low >> 32
            if self._started:
                self._out.append((self._cache + carry) & 0xFF)
            if self._pending:
                self._out.extend(((0xFF + carry) & 0xFF,) * self._pending)
                self._pending = 0
            self._cache = (low >> 24) & 0xFF
            self._started = True
        else:
            self._pending += 1
        self._low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        """Flush the remaining state; at most 8 bytes beyond the symbol cost."""
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Mirror of RangeEncoder over a byte string."""

    def __init__(self, data):
        self._data = data
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise TruncatedPayload("compressed payload exhausted")
        b = self._data[self._pos]
        self._pos += 1
        return b

    @property
    def bytes_consumed(self) -> int:
        return self._pos

    def decode_target(self) -> int:
        """Grid position of the pending symbol; pass it to locate_symbol."""
        f = self._code // (self._range >> GRID_BITS)
        return GRID - 1 if f > GRID - 1 else f

    def decode_update(self, c_lo: int, c_hi: int) -> None:
        """Consume the located symbol's interval (must contain the target)."""
        if not (0 <= c_lo < c_hi <= GRID):
            raise InvalidInterval(f"bad interval [{c_lo}, {c_hi})")
        r = self._range >> GRID_BITS
        self._code -= r * c_lo
        self._range = r * (c_hi - c_lo)
        while self._range < _RENORM:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range = (self._range << 8) & _MASK32

"""
Static-Model Range Coder
========================
32-bit range coder over a fixed integer frequency table.

Encoder keeps a 33-bit ``low`` and resolves carries through a cached byte plus
a run of pending 0xFF bytes, so output is emitted one byte at a time and never
rewritten. The leading byte of that scheme is always zero and is not stored.
Up to four trailing zero bytes are stripped as well; the decoder supplies
them as implicit zeros and rejects any read beyond that.
"""

import logging
from bisect import bisect_right
from typing import Iterable, List, Sequence

logger = logging.getLogger(__name__)

RANGE_BITS = 32
TOP = 1 << 24
_MASK32 = (1 << RANGE_BITS) - 1
IMPLICIT_ZEROS = 4


class DecodeError(ValueError):
    """Malformed or corrupted stream; ``bit_offset`` locates the failure."""

    def __init__(self, message: str, bit_offset: int):
        super().__init__(f"{message} (bit offset {bit_offset})")
        self.error_type = "decode"
        self.bit_offset = bit_offset


class FrequencyTable:
    """Cumulative view of strictly positive integer counts."""

    def __init__(self, counts: Sequence[int]):
        counts = [int(c) for c in counts]
        if not counts or any(c < 1 for c in counts):
            raise ValueError("frequency counts must be a non-empty list of positive integers")
        self.counts = tuple(counts)
        cum = [0]
        for c in counts:
            cum.append(cum[-1] + c)
        self.cum = tuple(cum)
        self.total = cum[-1]
        if self.total > TOP >> 8:
            raise ValueError(f"frequency total {self.total} exceeds coder precision {TOP >> 8}")

    def __len__(self) -> int:
        return len(self.counts)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> RANGE_BITS
            byte = self._cache
            while True:
                self._out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (self.low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def encode(self, symbol: int, table: FrequencyTable) -> None:
        lo = self.range * table.cum[symbol] // table.total
        hi = self.range * table.cum[symbol + 1] // table.total
        self.low += lo
        self.range = hi - lo
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        # Any value in [low, low + range) decodes; pick the one with most trailing zeros.
        self.low = (self.low + TOP - 1) & ~(TOP - 1)
        for _ in range(5):
            self._shift_low()
        payload = bytes(self._out[1:])
        strip = 0
        while strip < IMPLICIT_ZEROS and strip < len(payload) and payload[-1 - strip] == 0:
            strip += 1
        return payload[: len(payload) - strip]


class RangeDecoder:
    def __init__(self, payload: bytes):
        self._data = payload
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos < len(self._data):
            byte = self._data[self._pos]
        elif self._pos < len(self._data) + IMPLICIT_ZEROS:
            byte = 0
        else:
            raise DecodeError("read past the end of the payload", bit_offset=self.bit_offset)
        self._pos += 1
        return byte

    @property
    def bit_offset(self) -> int:
        return 8 * self._pos

    def decode(self, table: FrequencyTable) -> int:
        if self.code >= self.range:
            raise DecodeError("range violation", bit_offset=self.bit_offset)
        value = ((self.code + 1) * table.total - 1) // self.range
        symbol = bisect_right(table.cum, value) - 1
        lo = self.range * table.cum[symbol] // table.total
        hi = self.range * table.cum[symbol + 1] // table.total
        self.code -= lo
        self.range = hi - lo
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        return symbol


def encode_sequence(symbols: Iterable[int], table: FrequencyTable) -> bytes:
    enc = RangeEncoder()
    for s in symbols:
        enc.encode(int(s), table)
    return enc.finish()


def decode_sequence(payload: bytes, count: int, table: FrequencyTable) -> List[int]:
    dec = RangeDecoder(payload)
    return [dec.decode(table) for _ in range(count)]


if __name__ == "__main__":
    # Quick round-trip smoke check
    table = FrequencyTable([16384, 8192, 8192])
    message = [0, 1, 2, 0, 0, 2, 1, 0] * 50
    blob = encode_sequence(message, table)
    assert decode_sequence(blob, len(message), table) == message
    print(f"{len(message)} symbols -> {len(blob)} bytes")

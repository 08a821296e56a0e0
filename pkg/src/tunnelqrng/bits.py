"""Packed bit strings, MSB-first within every byte."""

from __future__ import annotations

import numpy as np

from .errors import FormatError, LengthMismatch

_CHUNK = 1 << 20


class BitStream:
    """``bit_count`` bits packed into bytes; bit 0 is the MSB of byte 0."""

    __slots__ = ("data", "bit_count")

    def __init__(self, data, bit_count: int | None = None):
        data = np.frombuffer(bytes(data), dtype=np.uint8).copy() if isinstance(data, (bytes, bytearray)) \
            else np.ascontiguousarray(data, dtype=np.uint8)
        if bit_count is None:
            bit_count = 8 * data.size
        if not 0 <= bit_count <= 8 * data.size or data.size != (bit_count + 7) // 8:
            raise FormatError(f"{data.size} bytes cannot hold exactly {bit_count} bits")
        pad = (-bit_count) % 8
        if pad and data[-1] & ((1 << pad) - 1):
            raise FormatError("trailing pad bits must be zero")
        self.data = data
        self.bit_count = int(bit_count)

    @classmethod
    def from_bits(cls, bits) -> "BitStream":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.size and bits.max() > 1:
            raise FormatError("bits must be 0 or 1")
        return cls(np.packbits(bits), bits.size)

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.data, count=self.bit_count)

    def slice(self, start: int, stop: int) -> "BitStream":
        if not 0 <= start <= stop <= self.bit_count:
            raise LengthMismatch(f"slice [{start}, {stop}) outside {self.bit_count} bits")
        if start % 8 == 0:
            raw = self.data[start // 8:(stop + 7) // 8].copy()
            pad = (-(stop - start)) % 8
            if pad:
                raw[-1] &= (0xFF << pad) & 0xFF
            return BitStream(raw, stop - start)
        return BitStream.from_bits(self.to_bits()[start:stop])

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __len__(self):
        return self.bit_count

    def __eq__(self, other):
        return isinstance(other, BitStream) and self.bit_count == other.bit_count \
            and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"BitStream(bit_count={self.bit_count})"


def concat(streams) -> BitStream:
    streams = list(streams)
    if all(s.bit_count % 8 == 0 for s in streams[:-1]):
        data = np.concatenate([s.data for s in streams]) if streams else np.zeros(0, np.uint8)
        return BitStream(data, sum(s.bit_count for s in streams))
    return BitStream.from_bits(np.concatenate([s.to_bits() for s in streams]))


def symbols_to_bits(symbols, k: int) -> BitStream:
    """Concatenate ``k``-bit symbols, each written MSB-first."""
    symbols = np.asarray(symbols, dtype=np.uint16)
    shifts = np.arange(k - 1, -1, -1, dtype=np.uint16)
    parts = []
    for start in range(0, symbols.size, _CHUNK):
        chunk = symbols[start:start + _CHUNK]
        parts.append(((chunk[:, None] >> shifts) & 1).astype(np.uint8).ravel())
    bits = np.concatenate(parts) if parts else np.zeros(0, np.uint8)
    return BitStream.from_bits(bits)

"""Toeplitz-hashing extractor over GF(2).

Indexing convention, stated bit-exactly: for an ``n x m`` matrix and a seed
``s`` of ``m + n - 1`` bits,

    T[i][j] = s[j - i + n - 1]

so the first row is ``s[n-1 .. n+m-1)`` and the first column, read top to
bottom, is ``s[n-1], s[n-2], ..., s[0]``.  Equivalently the output is

    z[i] = XOR over j with x[j] = 1 of s[j + n - 1 - i],

i.e. the XOR of the seed windows ``s[j : j+n]`` picked out by the input's
one bits, read back to front.  All three engines below compute exactly this.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .bits import BitStream, concat
from .errors import FormatError, InsufficientSeed, InvalidModel, LengthMismatch

BITS_MAGIC = b"QTUNBIT1"
ENGINES = ("naive", "packed", "fft")


@dataclass(frozen=True, eq=False)
class ToeplitzSpec:
    m: int
    n: int
    seed_bits: BitStream | None = field(default=None, repr=False)
    security_margin: int = 100
    provenance: str = ""

    def __post_init__(self):
        if not 1 <= self.n <= self.m:
            raise InvalidModel(f"need 1 <= n <= m, got n={self.n}, m={self.m}")
        if self.seed_bits is not None and len(self.seed_bits) != self.seed_length:
            raise InsufficientSeed(f"seed has {len(self.seed_bits)} bits, spec needs {self.seed_length}")

    @property
    def seed_length(self) -> int:
        return self.m + self.n - 1

    @property
    def rate(self) -> float:
        return self.n / self.m

    def with_seed(self, seed_bits: BitStream, provenance: str = "") -> "ToeplitzSpec":
        return ToeplitzSpec(self.m, self.n, seed_bits, self.security_margin, provenance)

    def matrix(self) -> np.ndarray:
        """Dense ``n x m`` matrix; only sensible for small dimensions."""
        s = self._seed_array
        i = np.arange(self.n)[:, None]
        j = np.arange(self.m)[None, :]
        return s[j - i + self.n - 1]

    @cached_property
    def _seed_array(self) -> np.ndarray:
        if self.seed_bits is None:
            raise InsufficientSeed("spec carries no seed")
        return self.seed_bits.to_bits()

    @cached_property
    def _shifted_words(self) -> np.ndarray:
        return _shift_table(self._seed_array)


def seed_from_stream(source: BitStream, m: int, n: int, margin: int = 100, provenance: str = "") -> ToeplitzSpec:
    """Take the first ``m + n - 1`` bits of ``source`` as the matrix seed."""
    need = m + n - 1
    if len(source) < need:
        raise InsufficientSeed(f"seed source has {len(source)} bits, need {need}")
    return ToeplitzSpec(m, n, source.slice(0, need), margin, provenance or f"first {need} bits of stream")


@numba.njit(cache=True)
def _naive(x, s, n):
    # row-wise AND and parity
    m = x.size
    out = np.zeros(n, np.uint8)
    for i in range(n):
        w = s[n - 1 - i:n - 1 - i + m]
        acc = np.uint8(0)
        for j in range(m):
            acc ^= np.uint8(x[j] & w[j])
        out[i] = acc & np.uint8(1)
    return out


@numba.njit(cache=True)
def _shift_table(s):
    # words[r, q] bit b = s[64q + r + b]
    L = s.size
    nq = (L + 63) // 64
    words = np.zeros((64, nq), np.uint64)
    for r in range(64):
        for q in range(nq):
            w = np.uint64(0)
            base = 64 * q + r
            for b in range(64):
                p = base + b
                if p < L and s[p]:
                    w |= np.uint64(1) << np.uint64(b)
            words[r, q] = w
    return words


@numba.njit(cache=True)
def _packed(x, words, n):
    # accumulate the seed windows s[j : j+n] selected by the set input bits
    nw = (n + 63) // 64
    acc = np.zeros(nw, np.uint64)
    for j in range(x.size):
        if x[j]:
            row = words[j & 63]
            q = j >> 6
            for w in range(nw):
                acc[w] ^= row[q + w]
    out = np.zeros(n, np.uint8)
    for p in range(n):
        out[n - 1 - p] = (acc[p >> 6] >> np.uint64(p & 63)) & np.uint64(1)
    return out


def _fft(x, s, n):
    m = x.size
    L = 1 << int(np.ceil(np.log2(m + n - 1)))
    X = np.fft.rfft(x.astype(np.float64), L)
    S = np.fft.rfft(s.astype(np.float64), L)
    c = np.fft.irfft(np.conj(X) * S, L)[:n]
    r = np.rint(c)
    if np.max(np.abs(c - r), initial=0.0) > 0.25:
        raise ArithmeticError("convolution rounding error too large for exact parity")
    return (r.astype(np.int64) & 1).astype(np.uint8)[::-1].copy()


def extract(block: BitStream, spec: ToeplitzSpec, engine: str = "packed") -> BitStream:
    """``T x`` over GF(2) for one ``m``-bit block."""
    if len(block) != spec.m:
        raise LengthMismatch(f"block has {len(block)} bits, spec expects m={spec.m}")
    x = block.to_bits()
    if engine == "naive":
        z = _naive(x, spec._seed_array, spec.n)
    elif engine == "packed":
        z = _packed(x, spec._shifted_words, spec.n)
    elif engine == "fft":
        z = _fft(x, spec._seed_array, spec.n)
    else:
        raise InvalidModel(f"unknown engine {engine!r}; choose from {ENGINES}")
    return BitStream.from_bits(z)


def extract_stream(bits: BitStream, spec: ToeplitzSpec, engine: str = "packed") -> BitStream:
    """Extract every whole ``m``-bit block in order; a trailing partial block is dropped."""
    blocks = len(bits) // spec.m
    return concat(extract(bits.slice(b * spec.m, (b + 1) * spec.m), spec, engine) for b in range(blocks))


def write_extracted(path: str | os.PathLike, out: BitStream, spec: ToeplitzSpec) -> None:
    seed = spec.seed_bits if spec.seed_bits is not None else BitStream(b"", 0)
    with open(path, "wb") as fh:
        fh.write(BITS_MAGIC)
        fh.write(len(out).to_bytes(8, "little"))
        fh.write(len(seed).to_bytes(8, "little"))
        fh.write(seed.tobytes())
        fh.write(out.tobytes())


def read_extracted(path: str | os.PathLike) -> tuple[BitStream, BitStream]:
    """Return ``(output bits, seed bits)`` from an extracted-bits file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != BITS_MAGIC or len(raw) < 24:
        raise FormatError(f"{path}: not an extracted-bits file")
    nbits = int.from_bytes(raw[8:16], "little")
    nseed = int.from_bytes(raw[16:24], "little")
    seed_end = 24 + (nseed + 7) // 8
    if len(raw) != seed_end + (nbits + 7) // 8:
        raise FormatError(f"{path}: length does not match header")
    return BitStream(raw[seed_end:], nbits), BitStream(raw[24:seed_end], nseed)

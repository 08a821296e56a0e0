"""Min-entropy of k-bit symbols and extraction planning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlockTooSmall, EmptyHistogram, FormatError, InvalidModel
from .kvtext import format_kv, parse_kv

DEFAULT_BLOCK = 1_000_000
DEFAULT_MARGIN = 100


@dataclass(frozen=True)
class EntropyReport:
    k: int
    sample_count: int
    max_probability: float

    @property
    def min_entropy_per_symbol(self) -> float:
        return -math.log2(self.max_probability)

    @property
    def min_entropy_per_bit(self) -> float:
        return self.min_entropy_per_symbol / self.k

    def to_kv(self) -> dict[str, object]:
        return {
            "k": self.k,
            "sample_count": self.sample_count,
            "max_probability": self.max_probability,
            "min_entropy_per_symbol": self.min_entropy_per_symbol,
            "min_entropy_per_bit": self.min_entropy_per_bit,
        }


def min_entropy(histogram, k: int) -> EntropyReport:
    """``-log2`` of the most frequent symbol's empirical probability."""
    counts = np.asarray(histogram, dtype=np.int64)
    if counts.ndim != 1 or counts.size > (1 << k):
        raise InvalidModel(f"histogram must have at most 2**k = {1 << k} cells")
    if np.any(counts < 0):
        raise InvalidModel("negative counts")
    total = int(counts.sum())
    if total < 1:
        raise EmptyHistogram("histogram has no counts")
    return EntropyReport(int(k), total, int(counts.max()) / total)


def format_entropy(report: EntropyReport) -> str:
    return format_kv(report.to_kv())


def parse_entropy(text: str) -> EntropyReport:
    kv = parse_kv(text)
    try:
        return EntropyReport(int(kv["k"]), int(kv["sample_count"]), float(kv["max_probability"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad entropy report: {exc}") from None


def plan_output_bits(m: int, h_per_bit: float, margin: int) -> int:
    # round away float noise first so 0.979 * 10**6 is 979000, not 978999
    return math.floor(round(m * h_per_bit, 6)) - int(margin)


def plan_extraction(report: EntropyReport, m: int = DEFAULT_BLOCK, margin: int = DEFAULT_MARGIN):
    """Output length ``n = floor(m * H/k) - margin`` for a block of ``m`` input bits.

    Returns an unseeded ToeplitzSpec; attach a seed with ``seed_from_stream``.
    """
    from .toeplitz import ToeplitzSpec

    if m < 1 or margin < 0:
        raise BlockTooSmall(f"need m >= 1 and margin >= 0, got m={m}, margin={margin}")
    n = plan_output_bits(int(m), report.min_entropy_per_bit, margin)
    if n <= 0:
        raise BlockTooSmall(
            f"m={m} at {report.min_entropy_per_bit:.6f} bits/bit leaves no output after margin {margin}")
    return ToeplitzSpec(int(m), n, None, int(margin))

"""Equal-mass interval binning and symbol encoding.

The bin table splits the geometric interval law into ``2**k`` slices of
(as nearly as integer thresholds allow) equal probability.  The law is the
exact geometric pmf conditioned on ``n > holdoff_periods``, so its CDF is
``1 - (1 - p0)**(n - holdoff_periods)``.  Symbol ``s`` covers the intervals
``boundaries[s-1] < n <= boundaries[s]``; the last symbol takes the whole
tail.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidModel, ResolutionError
from .kvtext import format_kv, parse_kv
from .source import IntervalStream, SourceModel

SYMBOL_MAGIC = b"QTUNSYM1"
MASS_TOLERANCE = 0.02


def _geometric_cdf(p0: float, m):
    """P(N - holdoff <= m) for the conditioned geometric law."""
    m = np.asarray(m, dtype=np.float64)
    if p0 >= 1.0:
        return np.where(m >= 1, 1.0, 0.0)
    return -np.expm1(m * math.log1p(-p0))


@dataclass(frozen=True)
class BinTable:
    k: int
    boundaries: np.ndarray = field(repr=False)
    model: SourceModel

    @property
    def p0(self) -> float:
        return self.model.p0

    @property
    def holdoff_periods(self) -> int:
        return self.model.holdoff_periods

    @property
    def n_symbols(self) -> int:
        return 1 << self.k

    @property
    def identity(self) -> str:
        h = hashlib.sha256()
        h.update(f"k={self.k};p0={self.p0!r};holdoff={self.holdoff_periods};".encode())
        h.update(np.asarray(self.boundaries, dtype="<u8").tobytes())
        return h.hexdigest()

    def bin_masses(self) -> np.ndarray:
        """Theoretical probability of every symbol under the target law."""
        edges = np.asarray(self.boundaries, dtype=np.float64) - self.holdoff_periods
        cdf = _geometric_cdf(self.p0, edges)
        return np.diff(np.concatenate([[0.0], cdf, [1.0]]))

    def mass_deviation(self) -> np.ndarray:
        """Relative deviation of each non-tail bin mass from ``2**-k``."""
        return self.bin_masses()[:-1] * self.n_symbols - 1.0

    def within_tolerance(self, tol: float = MASS_TOLERANCE) -> bool:
        return bool(np.all(np.abs(self.mass_deviation()) <= tol))


def build_bin_table(model: SourceModel, k: int) -> BinTable:
    """Thresholds ``b_j`` = smallest ``n`` with CDF(n) >= j / 2**k, j = 1..2**k - 1.

    Only ``model.p0`` and ``model.holdoff_periods`` matter; the after-pulse
    terms are ignored because the target is the ideal law.  Raises
    ResolutionError when two thresholds coincide, i.e. ``p0`` is too large
    to give ``2**k`` distinct symbols.
    """
    if not isinstance(model, SourceModel):
        raise InvalidModel("build_bin_table needs a SourceModel")
    if isinstance(k, bool) or int(k) != k or not 1 <= int(k) <= 16:
        raise InvalidModel(f"k must be an integer in [1, 16], got {k!r}")
    p0, holdoff_periods = model.p0, model.holdoff_periods
    k = int(k)
    K = 1 << k
    j = np.arange(1, K, dtype=np.float64)
    target = j / K
    if p0 >= 1.0:
        m = np.ones(K - 1)
    else:
        m = np.ceil(np.log1p(-target) / math.log1p(-p0))
        m = np.maximum(m, 1.0)
        # repair floating-point misses of the exact ceiling either way
        for _ in range(3):
            low = _geometric_cdf(p0, m - 1) >= target
            m = np.where(low & (m > 1), m - 1, m)
            high = _geometric_cdf(p0, m) < target
            m = np.where(high, m + 1, m)
    m = m.astype(np.int64)
    if np.any(np.diff(m) <= 0):
        dup = int(np.count_nonzero(np.diff(m) <= 0))
        raise ResolutionError(
            f"p0={p0!r} gives only {K - 1 - dup} distinct thresholds; {K - 1} needed for k={k}")
    bounds = m + int(holdoff_periods)
    bounds.setflags(write=False)
    return BinTable(k, bounds, model)


@dataclass
class SymbolStream:
    symbols: np.ndarray
    k: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.symbols = np.ascontiguousarray(self.symbols, dtype=np.uint16)
        if self.symbols.size and int(self.symbols.max()) >= (1 << self.k):
            raise FormatError(f"symbol out of range for k={self.k}")

    def __len__(self):
        return int(self.symbols.size)


def encode_intervals(intervals, table: BinTable) -> np.ndarray:
    """Bin index of every interval: the first threshold ``>= n``."""
    return np.searchsorted(table.boundaries, np.asarray(intervals), side="left").astype(np.uint16)


def encode(stream: IntervalStream, table: BinTable) -> SymbolStream:
    prov = {"table": table.identity, "k": table.k, "source": stream.source,
            "bias_voltage": stream.bias_voltage}
    return SymbolStream(encode_intervals(stream.intervals, table), table.k, prov)


def symbol_histogram(stream: SymbolStream) -> np.ndarray:
    return np.bincount(stream.symbols, minlength=1 << stream.k).astype(np.int64)


def format_histogram_csv(counts, expected=None) -> str:
    counts = np.asarray(counts)
    if expected is None:
        expected = np.full(len(counts), counts.sum() / len(counts))
    lines = ["symbol,count,expected"]
    lines += [f"{s},{int(c)},{float(e)!r}" for s, (c, e) in enumerate(zip(counts, np.asarray(expected, float)))]
    return "\n".join(lines) + "\n"


def write_symbols(path: str | os.PathLike, stream: SymbolStream) -> None:
    with open(path, "wb") as fh:
        fh.write(SYMBOL_MAGIC)
        fh.write(bytes([stream.k]))
        fh.write(stream.symbols.astype("<u2", copy=False).tobytes())


def read_symbols(path: str | os.PathLike) -> SymbolStream:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != SYMBOL_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 9:
        raise FormatError(f"{path}: missing symbol width byte")
    k = raw[8]
    if not 1 <= k <= 16:
        raise FormatError(f"{path}: invalid symbol width {k}")
    payload = raw[9:]
    if len(payload) % 2:
        raise FormatError(f"{path}: truncated payload")
    return SymbolStream(np.frombuffer(payload, dtype="<u2").astype(np.uint16), k,
                        {"file": os.fspath(path)})


def format_bin_table(table: BinTable) -> str:
    return format_kv({
        "k": table.k,
        "p0": table.p0,
        "holdoff_periods": table.holdoff_periods,
        "clock_period": table.model.clock_period,
        "identity": table.identity,
        "boundaries": ",".join(str(int(b)) for b in table.boundaries),
    })


def parse_bin_table(text: str) -> BinTable:
    kv = parse_kv(text)
    try:
        k = int(kv["k"])
        p0 = float(kv["p0"])
        hold = int(kv.get("holdoff_periods", "0"))
        clock = float(kv.get("clock_period", "2e-9"))
        bounds = np.array([int(v) for v in kv["boundaries"].split(",") if v.strip()], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad bin table: {exc}") from None
    if len(bounds) != (1 << k) - 1 or np.any(np.diff(bounds) <= 0):
        raise FormatError("bin table boundaries must be 2**k - 1 strictly increasing values")
    bounds.setflags(write=False)
    table = BinTable(k, bounds, SourceModel(p0, clock_period=clock, holdoff_periods=hold))
    if "identity" in kv and kv["identity"] != table.identity:
        raise FormatError("bin table identity hash does not match its contents")
    return table

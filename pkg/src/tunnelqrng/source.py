"""Interval streams: the raw random source.

An interval is the number of clock periods between adjacent detections,
counted from the previous detection and including the hold-off periods, so
the shortest recordable interval is ``holdoff_periods + 1``.

Simulation uses per-period Bernoulli trials driven by xoshiro256** (Blackman
and Vigna), 256-bit state seeded from a 64-bit seed through splitmix64.  A
period ``n`` after the previous detection fires when the next 64-bit output
``r`` satisfies ``r < floor(h(n) * 2**64)`` with hazard
``h(n) = min(1, p0 + A*exp(-B*n))`` (``h(n) = 0`` inside hold-off, where no
output is drawn).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import uint64

from .errors import DomainError, FormatError, InvalidModel, MetadataMissing
from .kvtext import format_value, parse_kv

INTERVAL_MAGIC = b"QTUNINT1"
# hazard tables are built out to this many periods; beyond it the hazard is computed per period
_TABLE_CAP = 1 << 22


@dataclass(frozen=True)
class SourceModel:
    """Per-period detection model.

    ``p0`` is the base tunneling probability per clock period, ``ap_amplitude``
    and ``ap_decay`` the after-pulse excess ``A*exp(-B*n)`` (``B`` per period).
    """

    p0: float
    ap_amplitude: float = 0.0
    ap_decay: float = 1.0
    clock_period: float = 2e-9
    holdoff_periods: int = 0

    def __post_init__(self):
        if not (0.0 < self.p0 <= 1.0):
            raise InvalidModel(f"p0 must lie in (0, 1], got {self.p0!r}")
        if not self.ap_amplitude >= 0.0:
            raise InvalidModel(f"after-pulse amplitude must be >= 0, got {self.ap_amplitude!r}")
        if not self.ap_decay > 0.0:
            raise InvalidModel(f"after-pulse decay must be > 0, got {self.ap_decay!r}")
        if self.p0 + self.ap_amplitude > 1.0 + 1e-15:
            raise InvalidModel("p0 + A must not exceed 1")
        if not self.clock_period > 0.0:
            raise InvalidModel("clock_period must be > 0")
        if int(self.holdoff_periods) != self.holdoff_periods or self.holdoff_periods < 0:
            raise InvalidModel(f"holdoff_periods must be a non-negative integer, got {self.holdoff_periods!r}")
        object.__setattr__(self, "holdoff_periods", int(self.holdoff_periods))

    @property
    def clock_hz(self) -> float:
        hz = 1.0 / self.clock_period
        # 1/(1/f) can miss an integer rate by an ulp; snap it back
        r = round(hz)
        return float(r) if abs(hz - r) <= 1e-9 * hz else hz

    def hazard(self, n):
        """Detection probability in period ``n`` since the previous detection."""
        n = np.asarray(n, dtype=np.float64)
        h = np.minimum(1.0, self.p0 + self.ap_amplitude * np.exp(-self.ap_decay * n))
        return np.where(n <= self.holdoff_periods, 0.0, h)


def holdoff_periods_from_ns(holdoff_ns: float, clock_hz: float) -> int:
    """Dead periods covering ``holdoff_ns``, rounded up (17 ns at 500 MHz -> 9)."""
    return int(math.ceil(holdoff_ns * 1e-9 * clock_hz - 1e-9))


@dataclass
class IntervalStream:
    intervals: np.ndarray
    clock_hz: float
    holdoff_ns: float = 0.0
    bias_voltage: str = "unknown"
    source: str = "simulated"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.intervals = np.ascontiguousarray(self.intervals, dtype=np.uint32)
        if not self.clock_hz > 0:
            raise DomainError("clock_hz must be > 0")
        if self.intervals.size and int(self.intervals.min()) < 1:
            raise DomainError("every interval must be >= 1")

    def __len__(self):
        return int(self.intervals.size)

    @property
    def clock_period(self) -> float:
        return 1.0 / self.clock_hz

    @property
    def holdoff_periods(self) -> int:
        return holdoff_periods_from_ns(self.holdoff_ns, self.clock_hz)

    def metadata(self) -> dict[str, object]:
        md = {
            "clock_hz": self.clock_hz,
            "holdoff_ns": self.holdoff_ns,
            "bias_voltage": self.bias_voltage,
            "source": self.source,
        }
        md.update(self.extra)
        return md

    def with_intervals(self, intervals, **extra) -> "IntervalStream":
        ex = dict(self.extra)
        ex.update(extra)
        return IntervalStream(intervals, self.clock_hz, self.holdoff_ns, self.bias_voltage, self.source, ex)


def interval_pmf(model: SourceModel, n):
    """Probability that an interval equals ``n`` periods.

    ``P(n) = h(n) * prod_{i<n} (1 - h(i))``, evaluated in log space.  With
    ``A = 0`` and no hold-off this is the geometric law ``(1-p0)**(n-1) p0``.
    Accepts a scalar or an array of ``n``.
    """
    arr = np.asarray(n)
    if arr.size and (np.any(arr < 1) or not np.all(np.equal(np.mod(arr, 1), 0))):
        raise DomainError("interval_pmf needs integer n >= 1")
    arr = arr.astype(np.int64)
    if arr.size == 0:
        return np.zeros(arr.shape)
    n_max = int(arr.max())
    out = np.exp(_log_pmf_array(model, n_max))[arr - 1]
    return float(out) if np.ndim(n) == 0 else out


def _log_pmf_array(model: SourceModel, n_max: int) -> np.ndarray:
    """log P(n) for n = 1..n_max."""
    h = model.hazard(np.arange(1, n_max + 1))
    p0, A, B = model.p0, model.ap_amplitude, model.ap_decay
    k = model.holdoff_periods
    # survival through periods k+1..n-1; closed form for the constant part
    # and an explicit sum for the decaying excess while it is resolvable
    n = np.arange(1, n_max + 1, dtype=np.float64)
    live = np.maximum(n - 1 - k, 0)
    if p0 >= 1.0:
        base = np.where(live > 0, -np.inf, 0.0)
    else:
        base = live * math.log1p(-p0)
    excess = np.zeros(n_max)
    if A > 0.0 and p0 < 1.0 and n_max > 1:
        i = np.arange(1, n_max, dtype=np.float64)
        hi = model.hazard(i)
        with np.errstate(divide="ignore"):
            term = np.log1p(-hi) - np.where(i > k, math.log1p(-p0), 0.0)
        excess[1:] = np.cumsum(term)
    with np.errstate(divide="ignore"):
        return np.log(h) + base + excess


@numba.njit(inline="always")
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@numba.njit(inline="always")
def _next(s):
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    result = _rotl(s1 * uint64(5), 7) * uint64(9)
    t = s1 << uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3
    return result


def xoshiro_state(seed: int) -> np.ndarray:
    """256-bit xoshiro256** state expanded from a 64-bit seed with splitmix64."""
    mask = (1 << 64) - 1
    x = int(seed) & mask
    out = []
    for _ in range(4):
        x = (x + 0x9E3779B97F4A7C15) & mask
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return np.array(out, dtype=np.uint64)


@numba.njit(cache=True)
def xoshiro_fill(state, out):
    """Fill ``out`` with consecutive uint64 outputs, advancing ``state`` in place."""
    for i in range(out.shape[0]):
        out[i] = _next(state)


@numba.njit(inline="always")
def _step(s0, s1, s2, s3):
    r = _rotl(s1 * uint64(5), 7) * uint64(9)
    t = s1 << uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return r, s0, s1, s2, s3


@numba.njit(cache=True)
def _simulate(state, table, n_certain, flat, holdoff, p0, A, B, out):
    # table[n] = floor(h(n) 2^64) for n <= last; h(n) == 1 for n <= n_certain;
    # when ``flat`` the threshold stays table[last] for every n > last
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    last = table.shape[0] - 1
    tail = table[last]
    for k in range(out.shape[0]):
        n = holdoff
        done = False
        while n < last:
            n += 1
            r, s0, s1, s2, s3 = _step(s0, s1, s2, s3)
            if r < table[n] or n <= n_certain:
                done = True
                break
        if not done:
            if flat:
                while True:
                    n += 1
                    r, s0, s1, s2, s3 = _step(s0, s1, s2, s3)
                    if r < tail:
                        break
            else:
                while True:
                    n += 1
                    r, s0, s1, s2, s3 = _step(s0, s1, s2, s3)
                    h = p0 + A * np.exp(-B * n)
                    if h >= 1.0 or r < uint64(np.ldexp(h, 64)):
                        break
        out[k] = n
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def _hazard_table(model: SourceModel):
    """uint64 thresholds floor(h(n) 2^64) for n = 0..last, plus certainty and flatness info."""
    p0, A, B = model.p0, model.ap_amplitude, model.ap_decay
    base = model.holdoff_periods + 1
    if A > 0.0:
        # past this n the excess no longer changes the 64-bit threshold
        flat_from = base + int(math.ceil(max(0.0, math.log(A) + 64 * math.log(2)) / B)) + 2
    else:
        flat_from = base + 1
    last = min(flat_from, _TABLE_CAP)
    n = np.arange(last + 1, dtype=np.float64)
    h = np.minimum(1.0, p0 + A * np.exp(-B * n))
    certain = h >= 1.0
    n_certain = int(np.nonzero(certain)[0].max()) if certain.any() else -1
    scaled = np.ldexp(np.where(certain, 0.0, h), 64)
    table = np.minimum(scaled, np.ldexp(1.0, 64) - 2048.0).astype(np.uint64)
    return table, n_certain, last == flat_from


def sample_intervals(model: SourceModel, count: int, seed: int, bias_voltage: str = "simulated") -> IntervalStream:
    """Draw ``count`` intervals by per-period Bernoulli trials.

    The after-pulse clock starts at the detection instant and runs through the
    hold-off; only the most recent detection contributes excess probability.
    Deterministic in ``(model, count, seed)``, and a longer run extends a
    shorter one with the same seed.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    table, n_certain, flat = _hazard_table(model)
    state = xoshiro_state(seed)
    out = np.empty(int(count), dtype=np.int64)
    _simulate(state, table, n_certain, flat, model.holdoff_periods, model.p0, model.ap_amplitude,
              model.ap_decay, out)
    if out.max() > 0xFFFFFFFF:
        raise DomainError("simulated interval exceeds the 32-bit file format")
    holdoff_ns = model.holdoff_periods * 1e9 / model.clock_hz
    return IntervalStream(
        out.astype(np.uint32),
        clock_hz=model.clock_hz,
        holdoff_ns=holdoff_ns,
        bias_voltage=bias_voltage,
        source="simulated",
        extra={"seed": int(seed), "rng": "xoshiro256**/splitmix64", "p0": model.p0,
               "ap_amplitude": model.ap_amplitude, "ap_decay": model.ap_decay},
    )


def meta_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".meta"


def write_intervals(path: str | os.PathLike, stream: IntervalStream) -> None:
    """Write the interval payload and its ``.meta`` sidecar."""
    data = np.asarray(stream.intervals)
    with open(path, "wb") as fh:
        fh.write(INTERVAL_MAGIC)
        fh.write(data.astype("<u4", copy=False).tobytes())
    md = stream.metadata()
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        for k, v in md.items():
            fh.write(f"{k}={format_value(v)}\n")


def ingest_intervals(path: str | os.PathLike) -> IntervalStream:
    """Read an interval file and its sidecar into an IntervalStream."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != INTERVAL_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    payload = raw[8:]
    if len(payload) == 0:
        raise FormatError(f"{path}: empty payload")
    if len(payload) % 4:
        raise FormatError(f"{path}: truncated payload ({len(payload)} bytes is not a multiple of 4)")
    values = np.frombuffer(payload, dtype="<u4").astype(np.uint32)
    if values.min() < 1:
        raise FormatError(f"{path}: zero interval in payload")
    try:
        with open(meta_path(path), encoding="utf-8") as fh:
            md = parse_kv(fh.read())
    except FileNotFoundError:
        raise MetadataMissing(f"missing sidecar {meta_path(path)}") from None
    if "clock_hz" not in md:
        raise MetadataMissing(f"{meta_path(path)} has no clock_hz")
    try:
        clock_hz = float(md.pop("clock_hz"))
        holdoff_ns = float(md.pop("holdoff_ns", "0"))
    except ValueError as exc:
        raise FormatError(f"{meta_path(path)}: {exc}") from None
    bias = md.pop("bias_voltage", "unknown")
    source = md.pop("source", "hardware")
    return IntervalStream(values, clock_hz, holdoff_ns, bias, source, extra=md)


@dataclass(frozen=True)
class SecondBucket:
    second: int
    count: int
    partial: bool = False


def dcr_per_second(stream: IntervalStream) -> list[SecondBucket]:
    """Detections per wall-clock second.

    Detection ``k`` happens at the cumulative sum of the first ``k`` intervals
    times the clock period; it is counted in bucket ``s`` when its time lies in
    ``[s, s+1)`` seconds.  Buckets run from 0 to the bucket of the last
    detection, zeros included; the last one is always flagged partial.
    """
    if len(stream) == 0:
        return []
    ticks = np.cumsum(stream.intervals, dtype=np.uint64)
    hz = stream.clock_hz
    if float(hz).is_integer():
        sec = (ticks // np.uint64(int(hz))).astype(np.int64)
    else:
        sec = np.floor(ticks.astype(np.float64) / hz).astype(np.int64)
    counts = np.bincount(sec)
    last = len(counts) - 1
    return [SecondBucket(s, int(c), s == last) for s, c in enumerate(counts)]


def format_dcr_csv(buckets: list[SecondBucket]) -> str:
    lines = ["second,count,partial"]
    lines += [f"{b.second},{b.count},{int(b.partial)}" for b in buckets]
    return "\n".join(lines) + "\n"

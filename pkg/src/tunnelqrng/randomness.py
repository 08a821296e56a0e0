"""A subset of the NIST SP 800-22 statistical tests with proportion analysis.

Every test takes a 0/1 ``uint8`` array and returns a p-value.  The battery
splits a bit stream into sequences, runs all tests on each and checks the
per-test pass proportion against a three-sigma binomial interval.

A sequence passes a test when ``alpha <= p <= 1 - alpha`` (both tails).  The
expected pass rate under that rule is ``1 - 2 alpha``, so the proportion
interval is centred there; the one-sided ``p >= alpha`` flag is reported
alongside.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import erfc, gammaincc, ndtr

from .bits import BitStream
from .errors import InsufficientData, ShapeMismatch, TooShort

LONGEST_RUN_BLOCK = 128
LONGEST_RUN_CLASSES = (4, 5, 6, 7, 8, 9)
BLOCK_FREQUENCY_BLOCK = 128
SERIAL_M = 5
APEN_M = 5


def frequency(bits) -> float:
    n = bits.size
    s = 2.0 * int(np.count_nonzero(bits)) - n
    return float(erfc(abs(s) / math.sqrt(n) / math.sqrt(2.0)))


def block_frequency(bits, M: int = BLOCK_FREQUENCY_BLOCK) -> float:
    N = bits.size // M
    if N < 1:
        raise TooShort(f"block frequency needs at least {M} bits")
    pi = bits[:N * M].reshape(N, M).sum(axis=1) / M
    chi2 = 4.0 * M * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(N / 2.0, chi2 / 2.0))


def runs(bits) -> float:
    n = bits.size
    pi = np.count_nonzero(bits) / n
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v - 2.0 * n * pi * (1 - pi))
    return float(erfc(num / (2.0 * math.sqrt(2.0 * n) * pi * (1 - pi))))


@lru_cache(maxsize=None)
def _count_max_run_at_most(M: int, r: int) -> int:
    # strings of length M whose longest run of ones is <= r
    if r < 0:
        return 0
    state = [1] + [0] * r  # state[j]: current trailing run of ones is j
    for _ in range(M):
        total = sum(state)
        state = [total] + state[:-1]
    return sum(state)


@lru_cache(maxsize=None)
def longest_run_probabilities(M: int = LONGEST_RUN_BLOCK, classes: tuple = LONGEST_RUN_CLASSES) -> tuple:
    """Exact class probabilities for the longest run of ones in ``M`` fair bits.

    Class 0 is "at most classes[0]", the last is "at least classes[-1]", the
    rest are single values.
    """
    F = [Fraction(_count_max_run_at_most(M, r), 2 ** M) for r in range(M + 1)]
    probs = [F[classes[0]]]
    probs += [F[c] - F[c - 1] for c in classes[1:-1]]
    probs.append(1 - F[classes[-1] - 1])
    return tuple(float(p) for p in probs)


def _longest_runs(blocks):
    # longest run of ones in each row
    best = np.zeros(blocks.shape[0], np.int64)
    cur = np.zeros(blocks.shape[0], np.int64)
    for col in blocks.T:
        cur = (cur + 1) * col
        np.maximum(best, cur, out=best)
    return best


def longest_run(bits, M: int = LONGEST_RUN_BLOCK) -> float:
    N = bits.size // M
    if N < 1:
        raise TooShort(f"longest run needs at least {M} bits")
    lr = _longest_runs(bits[:N * M].reshape(N, M).astype(np.int64))
    lo, hi = LONGEST_RUN_CLASSES[0], LONGEST_RUN_CLASSES[-1]
    nu = np.bincount(np.clip(lr, lo, hi) - lo, minlength=hi - lo + 1).astype(np.float64)
    pi = np.array(longest_run_probabilities(M))
    chi2 = float(np.sum((nu - N * pi) ** 2 / (N * pi)))
    K = len(pi) - 1
    return float(gammaincc(K / 2.0, chi2 / 2.0))


def _cusum_p(n: int, z: float) -> float:
    sq = math.sqrt(n)
    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    s1 = np.sum(ndtr((4 * k1 + 1) * z / sq) - ndtr((4 * k1 - 1) * z / sq))
    s2 = np.sum(ndtr((4 * k2 + 3) * z / sq) - ndtr((4 * k2 + 1) * z / sq))
    return float(min(max(1.0 - s1 + s2, 0.0), 1.0))


def cumulative_sums(bits) -> tuple[float, float]:
    """(forward, backward) p-values."""
    x = 2 * bits.astype(np.int64) - 1
    fwd = np.cumsum(x)
    z_f = int(np.max(np.abs(fwd)))
    bwd = np.cumsum(x[::-1])
    z_b = int(np.max(np.abs(bwd)))
    return _cusum_p(bits.size, z_f), _cusum_p(bits.size, z_b)


def _pattern_counts(bits, m: int) -> np.ndarray:
    # overlapping m-bit patterns with wrap-around
    if m == 0:
        return np.array([bits.size])
    ext = np.concatenate([bits, bits[:m - 1]]).astype(np.int64)
    n = bits.size
    v = np.zeros(n, np.int64)
    for t in range(m):
        v = (v << 1) | ext[t:t + n]
    return np.bincount(v, minlength=1 << m)


def _psi2(bits, m: int) -> float:
    if m <= 0:
        return 0.0
    n = bits.size
    c = _pattern_counts(bits, m).astype(np.float64)
    return (1 << m) / n * float(np.sum(c * c)) - n


def serial(bits, m: int = SERIAL_M) -> tuple[float, float]:
    p0, p1, p2 = _psi2(bits, m), _psi2(bits, m - 1), _psi2(bits, m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return float(gammaincc(2 ** (m - 2), d1 / 2.0)), float(gammaincc(2 ** (m - 3), d2 / 2.0))


def _phi(bits, m: int) -> float:
    c = _pattern_counts(bits, m).astype(np.float64)
    c = c[c > 0] / bits.size
    return float(np.sum(c * np.log(c)))


def approximate_entropy(bits, m: int = APEN_M) -> float:
    n = bits.size
    apen = _phi(bits, m) - _phi(bits, m + 1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2.0))


def dft_spectral(bits) -> float:
    n = bits.size
    x = 2.0 * bits - 1.0
    mod = np.abs(np.fft.rfft(x)[:n // 2])
    T = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = float(np.count_nonzero(mod < T))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return float(erfc(abs(d) / math.sqrt(2.0)))


# name -> (function, labels of the p-values it returns)
TESTS = {
    "frequency": (frequency, ("frequency",)),
    "block_frequency": (block_frequency, ("block_frequency",)),
    "runs": (runs, ("runs",)),
    "longest_run": (longest_run, ("longest_run",)),
    "cumulative_sums": (cumulative_sums, ("cumulative_sums_forward", "cumulative_sums_backward")),
    "serial": (serial, ("serial_1", "serial_2")),
    "approximate_entropy": (approximate_entropy, ("approximate_entropy",)),
    "dft_spectral": (dft_spectral, ("dft_spectral",)),
}


def run_sequence(bits) -> dict[str, float]:
    """All p-values for one sequence, keyed by row label."""
    bits = np.asarray(bits, dtype=np.uint8)
    out = {}
    for fn, labels in TESTS.values():
        p = fn(bits)
        for label, v in zip(labels, p if isinstance(p, tuple) else (p,)):
            out[label] = v
    return out


def chi_square_statistic(observed, expected, ddof: int = 0) -> tuple[float, int]:
    """Chi-square statistic and degrees of freedom after merging small cells.

    Adjacent cells are merged left to right until every expected count is at
    least 5; a short remainder joins the last merged cell.
    """
    obs = np.asarray(observed, dtype=np.float64)
    exp_ = np.asarray(expected, dtype=np.float64)
    if obs.shape != exp_.shape or obs.ndim != 1:
        raise ShapeMismatch(f"observed {obs.shape} and expected {exp_.shape} differ")
    if np.any(exp_ <= 0):
        raise ShapeMismatch("expected counts must all be > 0")
    mo, me = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp_):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            mo.append(acc_o)
            me.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if me:
            mo[-1] += acc_o
            me[-1] += acc_e
        else:
            mo.append(acc_o)
            me.append(acc_e)
    mo, me = np.array(mo), np.array(me)
    df = len(me) - 1 - int(ddof)
    if df < 1:
        raise InsufficientData(f"only {len(me)} cells after merging; no degrees of freedom left")
    return float(np.sum((mo - me) ** 2 / me)), df


def chi_square_gof(observed, expected, ddof: int = 0) -> float:
    """Upper-tail chi-square p-value (regularised upper incomplete gamma)."""
    stat, df = chi_square_statistic(observed, expected, ddof)
    return float(gammaincc(df / 2.0, stat / 2.0))


def proportion_interval(sequences: int, alpha: float) -> tuple[float, float, float]:
    """(centre, low, high) of the three-sigma pass-proportion interval."""
    a = 2.0 * alpha
    half = 3.0 * math.sqrt(a * (1 - a) / sequences)
    return 1 - a, 1 - a - half, 1 - a + half


def uniformity_p(pvalues) -> float:
    """Chi-square p-value of the p-values over ten equal bins."""
    pv = np.asarray(pvalues, dtype=np.float64)
    counts = np.bincount(np.minimum((pv * 10).astype(np.int64), 9), minlength=10)
    e = pv.size / 10.0
    return float(gammaincc(4.5, float(np.sum((counts - e) ** 2 / e)) / 2.0))


@dataclass
class TestResult:
    name: str
    p_values: np.ndarray = field(repr=False)
    passes: int
    proportion: float
    interval: tuple[float, float]
    verdict: bool
    one_sided_passes: int
    uniformity_p: float
    median_p: float


@dataclass
class TestReport:
    seq_len: int
    sequences: int
    alpha: float
    results: list[TestResult]

    @property
    def all_pass(self) -> bool:
        return all(r.verdict for r in self.results)

    def result(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def format_table(self) -> str:
        centre, lo, hi = proportion_interval(self.sequences, self.alpha)
        out = io.StringIO()
        out.write(f"# sequences={self.sequences} seq_len={self.seq_len} alpha={self.alpha}\n")
        out.write(f"# pass: {self.alpha} <= p <= {1 - self.alpha}; "
                  f"proportion interval {lo:.4f}..{hi:.4f} around {centre:.4f}\n")
        out.write("# P-value column: chi-square uniformity of the per-sequence p-values (10 bins); "
                  "median p also shown\n")
        out.write(f"{'Statistical Test':<26}{'P-value':>12}{'Median p':>12}{'Proportion':>14}  Assessment\n")
        for r in self.results:
            out.write(f"{r.name:<26}{r.uniformity_p:>12.6f}{r.median_p:>12.6f}"
                      f"{r.passes:>7d}/{self.sequences:<6d}  {'Success' if r.verdict else 'Failure'}\n")
        return out.getvalue()

    def format_pvalues_csv(self) -> str:
        names = [r.name for r in self.results]
        lines = ["sequence," + ",".join(names)]
        cols = np.column_stack([r.p_values for r in self.results])
        lines += [f"{i}," + ",".join(repr(float(v)) for v in row) for i, row in enumerate(cols)]
        return "\n".join(lines) + "\n"


def run_battery(bits: BitStream, seq_len: int = 1_000_000, alpha: float = 0.01) -> TestReport:
    """Split ``bits`` into whole sequences of ``seq_len`` and run every test."""
    if len(bits) < seq_len or seq_len < LONGEST_RUN_BLOCK:
        raise TooShort(f"{len(bits)} bits cannot form one sequence of {seq_len}")
    count = len(bits) // seq_len
    arr = bits.to_bits()
    rows = [run_sequence(arr[i * seq_len:(i + 1) * seq_len]) for i in range(count)]
    centre, lo, hi = proportion_interval(count, alpha)
    results = []
    for name in rows[0]:
        pv = np.array([r[name] for r in rows])
        passes = int(np.count_nonzero((pv >= alpha) & (pv <= 1 - alpha)))
        prop = passes / count
        results.append(TestResult(
            name, pv, passes, prop, (lo, hi), bool(lo <= prop <= hi),
            int(np.count_nonzero(pv >= alpha)), uniformity_p(pv), float(np.median(pv))))
    return TestReport(seq_len, count, alpha, results)

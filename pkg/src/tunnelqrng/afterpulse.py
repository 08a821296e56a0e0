"""After-pulse fitting and rejection pre-selection.

The after-pulsed interval law in the small-probability regime is

    P_r(t) = (p0 + A e^{-Bt}) exp(-p0 t - (A/B)(1 - e^{-Bt}))

and its log-quotient against the ideal law, normalised so that both agree in
the after-pulse-free tail, is ``ln(1 + A e^{-Bt}/p0) + (A/B) e^{-Bt}``, which to
first order is ``C e^{-Bt}`` with ``C = A (p0 + B) / (p0 B)``.  Time is counted
in clock periods throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FitDiverged, InsufficientData, InvalidModel
from .kvtext import format_kv, parse_kv
from .source import IntervalStream, SourceModel

MIN_INTERVALS = 100_000
MIN_BIN_COUNT = 50
TAIL_QUANTILE = 0.6
DEFAULT_BIN_WIDTH = 32


@dataclass(frozen=True)
class AfterpulseFit:
    p0_hat: float
    C_hat: float
    B_hat: float
    A_hat: float
    residual: float
    fit_range: tuple[int, int]
    C_stderr: float = float("nan")
    B_stderr: float = float("nan")
    p0_stderr: float = float("nan")
    r2_weighted: float = float("nan")
    bin_width: int = DEFAULT_BIN_WIDTH
    tail_threshold: int = 0
    n_bins: int = 0
    iterations: int = 0

    def __post_init__(self):
        if not 0.0 < self.p0_hat < 1.0:
            raise InvalidModel(f"p0_hat must lie in (0, 1), got {self.p0_hat!r}")
        if not self.B_hat > 0.0:
            raise InvalidModel(f"B_hat must be > 0, got {self.B_hat!r}")
        if not self.A_hat >= 0.0:
            raise InvalidModel(f"A_hat must be >= 0, got {self.A_hat!r}")

    def as_model(self, holdoff_periods: int = 0, clock_period: float = 2e-9) -> SourceModel:
        return SourceModel(self.p0_hat, self.A_hat, self.B_hat, clock_period, holdoff_periods)

    def to_kv(self) -> dict[str, object]:
        return {
            "p0_hat": self.p0_hat,
            "A_hat": self.A_hat,
            "B_hat": self.B_hat,
            "C_hat": self.C_hat,
            "residual": self.residual,
            "fit_range": f"{self.fit_range[0]}:{self.fit_range[1]}",
            "C_stderr": self.C_stderr,
            "B_stderr": self.B_stderr,
            "p0_stderr": self.p0_stderr,
            "r2_weighted": self.r2_weighted,
            "bin_width": self.bin_width,
            "tail_threshold": self.tail_threshold,
            "n_bins": self.n_bins,
            "iterations": self.iterations,
        }


def format_fit(fit: AfterpulseFit) -> str:
    return format_kv(fit.to_kv())


def parse_fit(text: str) -> AfterpulseFit:
    kv = parse_kv(text)
    try:
        lo, hi = (int(v) for v in kv["fit_range"].split(":"))
        opt = {k: float(kv[k]) for k in ("C_stderr", "B_stderr", "p0_stderr", "r2_weighted") if k in kv}
        ints = {k: int(kv[k]) for k in ("bin_width", "tail_threshold", "n_bins", "iterations") if k in kv}
        return AfterpulseFit(float(kv["p0_hat"]), float(kv["C_hat"]), float(kv["B_hat"]),
                             float(kv["A_hat"]), float(kv["residual"]), (lo, hi), **opt, **ints)
    except (KeyError, ValueError) as exc:
        raise DomainError(f"bad fit report: {exc}") from None


def _params(obj):
    if isinstance(obj, AfterpulseFit):
        return obj.p0_hat, obj.A_hat, obj.B_hat
    if isinstance(obj, SourceModel):
        return obj.p0, obj.ap_amplitude, obj.ap_decay
    p0, A, B = obj
    return float(p0), float(A), float(B)


def amplitude_from_prefactor(C: float, p0: float, B: float) -> float:
    """Invert ``C = A (p0 + B) / (p0 B)``; negative prefactors map to 0."""
    return max(C, 0.0) * p0 * B / (p0 + B)


def prefactor(p0: float, A: float, B: float) -> float:
    return A * (p0 + B) / (p0 * B)


def theoretical_pr(params, n):
    """Small-probability after-pulsed interval density at ``n`` periods.

    ``params`` is a SourceModel, an AfterpulseFit or a ``(p0, A, B)`` triple.
    """
    p0, A, B = _params(params)
    t = np.asarray(n, dtype=np.float64)
    if np.any(t < 1):
        raise DomainError("theoretical_pr needs n >= 1")
    decay = np.exp(-B * t)
    out = (p0 + A * decay) * np.exp(-p0 * t - (A / B) * (1.0 - decay))
    return float(out) if np.ndim(n) == 0 else out


def exponential_law(p0: float, n):
    """Ideal interval density ``p0 exp(-p0 n)``."""
    t = np.asarray(n, dtype=np.float64)
    out = p0 * np.exp(-p0 * t)
    return float(out) if np.ndim(n) == 0 else out


def log_quotient(params, n):
    """``ln(P_r / P)`` with the ideal law matched to the after-pulse-free tail."""
    p0, A, B = _params(params)
    t = np.asarray(n, dtype=np.float64)
    decay = np.exp(-B * t)
    return np.log1p(A * decay / p0) + (A / B) * decay


def acceptance_probability(params, n):
    """Keep probability ``r(n)`` that turns after-pulsed intervals into ideal ones.

    ``r(n) = [P(n) / P_r(n)] / sup_m [P(m) / P_r(m)]``; the ratio increases with
    ``n`` so the supremum is its limit ``exp(A/B)``, giving
    ``r(n) = p0 / (p0 + A e^{-Bn}) * exp(-(A/B) e^{-Bn})``.
    """
    p0, A, B = _params(params)
    t = np.asarray(n, dtype=np.float64)
    if A == 0.0:
        return np.ones_like(t)
    decay = np.exp(-B * t)
    return p0 / (p0 + A * decay) * np.exp(-(A / B) * decay)


@dataclass
class LogQuotientCurve:
    """Binned empirical log-quotient and the tail-matched reference."""

    lo: np.ndarray
    hi: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    y: np.ndarray
    n_weighted: list = field(repr=False)
    e_weighted: list = field(repr=False)

    @property
    def centers(self):
        return 0.5 * (self.lo + self.hi)

    def basis(self, B: float) -> tuple[np.ndarray, np.ndarray]:
        """Reference-weighted bin averages of ``e^{-Bn}`` and of its B-derivative."""
        g = np.empty(len(self.lo))
        dg = np.empty(len(self.lo))
        for i, (n, e) in enumerate(zip(self.n_weighted, self.e_weighted)):
            d = e * np.exp(-B * n)
            g[i] = d.sum()
            dg[i] = -(n * d).sum()
        return g, dg


def tail_estimate(intervals: np.ndarray, quantile: float = TAIL_QUANTILE) -> tuple[float, int, int, float]:
    """Geometric-tail MLE of p0 from intervals above the ``quantile`` threshold.

    Returns ``(p0_hat, threshold, n_tail, stderr)``.  Beyond the threshold the
    excess ``n - threshold`` is geometric on {1, 2, ...}, whose MLE is one over
    its mean.
    """
    t0 = int(np.quantile(intervals, quantile))
    tail = intervals[intervals > t0]
    if tail.size < 2:
        raise InsufficientData("tail above the quantile threshold is empty")
    mean_excess = float(np.mean(tail.astype(np.float64) - t0))
    p = 1.0 / mean_excess
    stderr = p * math.sqrt((1.0 - p) / tail.size)
    return p, t0, int(tail.size), stderr


def empirical_log_quotient(intervals, p0_hat: float, t0: int, n_tail: int,
                           bin_width: int = DEFAULT_BIN_WIDTH, min_count: int = MIN_BIN_COUNT) -> LogQuotientCurve:
    intervals = np.asarray(intervals)
    n_min = int(intervals.min())
    if t0 < n_min:
        raise InsufficientData("no intervals below the tail threshold")
    hist = np.bincount(intervals[intervals <= t0], minlength=t0 + 1)
    n = np.arange(n_min, t0 + 1)
    c = hist[n_min:t0 + 1].astype(np.float64)
    # reference matched to the tail: n_tail * p (1-p)^(n - t0 - 1)
    e = n_tail * p0_hat * np.exp((n - t0 - 1) * math.log1p(-p0_hat))
    lo, hi, cnt, exp_, ys, nw, ew = [], [], [], [], [], [], []
    for start in range(0, len(n), bin_width):
        sl = slice(start, start + bin_width)
        cb, eb = c[sl].sum(), e[sl].sum()
        if cb < min_count or eb <= 0:
            continue
        lo.append(int(n[sl][0]))
        hi.append(int(n[sl][-1]))
        cnt.append(cb)
        exp_.append(eb)
        ys.append(math.log(cb / eb))
        nw.append(n[sl].astype(np.float64))
        ew.append(e[sl] / eb)
    return LogQuotientCurve(np.array(lo), np.array(hi), np.array(cnt), np.array(exp_), np.array(ys), nw, ew)


def _weighted_loglinear(x, y, w):
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], np.log(y) * sw, rcond=None)
    return math.exp(coef[0]), -coef[1]


def _best_c(curve, B, w):
    g, _ = curve.basis(B)
    den = np.sum(w * g * g)
    return float(np.sum(w * g * curve.y) / den) if den > 0 else 0.0


def fit_afterpulse(stream: IntervalStream | np.ndarray, bin_width: int = DEFAULT_BIN_WIDTH,
                   min_count: int = MIN_BIN_COUNT, tail_quantile: float = TAIL_QUANTILE,
                   max_iter: int = 200) -> AfterpulseFit:
    """Fit ``C exp(-B n)`` to the empirical log-quotient and derive ``A``.

    p0 comes from the tail above the ``tail_quantile`` threshold.  The
    log-quotient is formed on bins of ``bin_width`` periods between the
    shortest interval and that threshold, keeping bins with at least
    ``min_count`` intervals, and fitted by count-weighted Gauss-Newton with
    backtracking, started from a log-linear regression on the leading run of
    positive bins.
    """
    intervals = stream.intervals if isinstance(stream, IntervalStream) else np.asarray(stream)
    if intervals.size < MIN_INTERVALS:
        raise InsufficientData(f"need at least {MIN_INTERVALS} intervals, got {intervals.size}")
    p0_hat, t0, n_tail, p0_se = tail_estimate(intervals, tail_quantile)
    if not 0.0 < p0_hat < 1.0:
        raise FitDiverged(f"tail estimate p0={p0_hat!r} outside (0, 1)")
    curve = empirical_log_quotient(intervals, p0_hat, t0, n_tail, bin_width, min_count)
    if len(curve.y) < 3:
        raise InsufficientData("fewer than 3 populated bins below the tail threshold")
    x, y, w = curve.centers, curve.y, curve.counts

    lead = 0
    while lead < len(y) and y[lead] > 0:
        lead += 1
    B = float("nan")
    if lead >= 3:
        _, B = _weighted_loglinear(x[:lead], y[:lead], w[:lead] * y[:lead] ** 2)
    if not (math.isfinite(B) and B > 0):
        B = 4.0 / max(float(x[-1] - x[0]), 1.0)
    C = _best_c(curve, B, w)

    def sse(C_, B_):
        g, _ = curve.basis(B_)
        r = y - C_ * g
        return float(np.sum(w * r * r))

    s = sse(C, B)
    it = 0
    for it in range(1, max_iter + 1):
        g, dg = curve.basis(B)
        r = y - C * g
        J = np.column_stack([g, C * dg])
        sw = np.sqrt(w)
        step, *_ = np.linalg.lstsq(J * sw[:, None], r * sw, rcond=None)
        lam = 1.0
        accepted = False
        for _ in range(40):
            Cn, Bn = C + lam * step[0], B + lam * step[1]
            if Bn > 0 and math.isfinite(Cn):
                sn = sse(Cn, Bn)
                if sn <= s:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            break
        rel = (s - sn) / max(s, 1e-300)
        C, B, s = Cn, Bn, sn
        if rel < 1e-12 or np.all(np.abs(lam * step) <= 1e-12 * (np.abs([C, B]) + 1e-300)):
            break
    if not (math.isfinite(C) and math.isfinite(B) and B > 0):
        raise FitDiverged("Gauss-Newton left the valid parameter region", residual=math.sqrt(s / len(y)),
                          state={"C": C, "B": B, "p0": p0_hat})

    g, dg = curve.basis(B)
    r = y - C * g
    J = np.column_stack([g, C * dg])
    dof = max(len(y) - 2, 1)
    scale = float(np.sum(w * r * r)) / dof
    try:
        cov = np.linalg.inv(J.T @ (J * w[:, None])) * scale
        C_se, B_se = math.sqrt(abs(cov[0, 0])), math.sqrt(abs(cov[1, 1]))
    except np.linalg.LinAlgError:
        C_se = B_se = float("inf")
    ybar = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * r * r)) / ss_tot if ss_tot > 0 else float("nan")
    return AfterpulseFit(
        p0_hat=p0_hat,
        C_hat=float(C),
        B_hat=float(B),
        A_hat=amplitude_from_prefactor(float(C), p0_hat, float(B)),
        residual=float(np.sqrt(np.mean(r * r))),
        fit_range=(int(curve.lo[0]), int(curve.hi[-1])),
        C_stderr=C_se,
        B_stderr=B_se,
        p0_stderr=p0_se,
        r2_weighted=r2,
        bin_width=int(bin_width),
        tail_threshold=t0,
        n_bins=len(y),
        iterations=it,
    )


def fitted_curve(stream: IntervalStream | np.ndarray, fit: AfterpulseFit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(n, empirical, fitted)`` log-quotient points on the fit's own binning."""
    intervals = stream.intervals if isinstance(stream, IntervalStream) else np.asarray(stream)
    n_tail = int(np.count_nonzero(intervals > fit.tail_threshold))
    curve = empirical_log_quotient(intervals, fit.p0_hat, fit.tail_threshold, n_tail, fit.bin_width)
    g, _ = curve.basis(fit.B_hat)
    return curve.centers, curve.y, fit.C_hat * g


def format_curve_csv(n, emp, fitted) -> str:
    lines = ["n,log_quotient_empirical,log_quotient_fitted"]
    lines += [f"{float(a)!r},{float(b)!r},{float(c)!r}" for a, b, c in zip(np.asarray(n, float), emp, fitted)]
    return "\n".join(lines) + "\n"


@dataclass
class SelectionReport:
    input_count: int
    kept_count: int
    acceptance_curve: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def keep_fraction(self) -> float:
        return self.kept_count / self.input_count if self.input_count else 0.0

    def to_kv(self) -> dict[str, object]:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "keep_fraction": self.keep_fraction,
            "seed": self.seed,
            "acceptance_min": float(self.acceptance_curve[1:].min()) if len(self.acceptance_curve) > 1 else 1.0,
        }


def preselect(stream: IntervalStream, fit: AfterpulseFit, seed: int) -> tuple[IntervalStream, SelectionReport]:
    """Keep each interval ``n`` independently with probability ``r(n)``.

    Uniforms come from numpy's PCG64 seeded with ``seed``.  The survivors
    follow the ideal law when the fit is right.  ``acceptance_curve[n]`` is
    ``r(n)`` for ``n = 0 .. max interval``.
    """
    intervals = stream.intervals
    n_max = int(intervals.max()) if intervals.size else 0
    curve = acceptance_probability(fit, np.arange(n_max + 1))
    u = np.random.Generator(np.random.PCG64(seed)).random(intervals.size)
    keep = u < curve[intervals]
    kept = stream.with_intervals(intervals[keep], preselect_seed=int(seed))
    return kept, SelectionReport(int(intervals.size), int(keep.sum()), curve, int(seed))


def geometric_cdf(p0: float, n, holdoff_periods: int = 0):
    """CDF of the ideal interval law (geometric, conditioned past the hold-off)."""
    m = np.asarray(n, dtype=np.float64) - holdoff_periods
    return np.where(m >= 1, -np.expm1(np.maximum(m, 0) * math.log1p(-p0)), 0.0)


def ks_distance_geometric(intervals, p0: float, holdoff_periods: int = 0) -> float:
    """Largest CDF gap between the intervals and the ideal law over all integers."""
    intervals = np.asarray(intervals)
    n_max = int(intervals.max())
    emp = np.cumsum(np.bincount(intervals, minlength=n_max + 1)) / intervals.size
    theo = geometric_cdf(p0, np.arange(n_max + 1), holdoff_periods)
    return float(np.max(np.abs(emp - theo)))


def geometric_cell_counts(intervals, p0: float, holdoff_periods: int = 0):
    """Observed and expected counts per integer interval, with one tail cell."""
    intervals = np.asarray(intervals)
    n_max = int(intervals.max())
    obs = np.bincount(intervals, minlength=n_max + 1)[holdoff_periods + 1:].astype(np.float64)
    n = np.arange(holdoff_periods + 1, n_max + 1)
    cdf = geometric_cdf(p0, np.concatenate([[holdoff_periods], n]), holdoff_periods)
    pmf = np.diff(cdf)
    exp_ = intervals.size * np.concatenate([pmf[:-1], [1.0 - cdf[-2]]])
    return obs, exp_

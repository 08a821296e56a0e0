"""Report figures.  Everything renders off-screen to PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .source import interval_pmf, SourceModel  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    # no Software/date metadata so reruns give identical bytes
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_interval_histogram(intervals, fit, path, holdoff_periods: int = 0, n_max: int | None = None):
    """Empirical interval pmf against the ideal law and the after-pulsed law."""
    intervals = np.asarray(intervals)
    n_max = n_max or int(np.quantile(intervals, 0.999))
    zoom = min(n_max, holdoff_periods + int(6.0 / fit.B_hat))
    with plt.rc_context({**STYLE, "figure.figsize": (9.6, 4.0)}):
        fig, (ax, az) = plt.subplots(1, 2)
        counts = np.bincount(intervals, minlength=n_max + 1)[1:n_max + 1]
        n = np.arange(1, n_max + 1)
        emp = counts / intervals.size
        ideal = interval_pmf(SourceModel(fit.p0_hat, holdoff_periods=holdoff_periods), n)
        pr = interval_pmf(fit.as_model(holdoff_periods), n)
        on = n > holdoff_periods
        keep = counts > 0
        ax.semilogy(n[keep], emp[keep], ".", ms=2, color="0.4", label="measured")
        ax.semilogy(n[on], ideal[on], "-", lw=1, label="geometric")
        ax.semilogy(n[on], pr[on], "--", lw=1, label="with after-pulse")
        z = on & (n <= zoom)
        az.plot(n[z], emp[z], ".", ms=3, color="0.4")
        az.plot(n[z], ideal[z], "-", lw=1)
        az.plot(n[z], pr[z], "--", lw=1)
        for a in (ax, az):
            a.set_xlabel("interval (clock periods)")
        ax.set_ylabel("probability")
        ax.legend()
        return _save(fig, path)


def plot_symbol_histogram(counts, path, title: str = ""):
    counts = np.asarray(counts)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(np.arange(counts.size), counts, width=1.0, color="0.35")
        ax.axhline(counts.sum() / counts.size, color="C3", lw=1, label="uniform")
        ax.set_xlabel("symbol")
        ax.set_ylabel("count")
        ax.set_xlim(-0.5, counts.size - 0.5)
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_log_quotient(n, empirical, fitted, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(n, empirical, "o", ms=3, color="0.4", label="measured")
        ax.plot(n, fitted, "-", color="C0", label="fit")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("interval (clock periods)")
        ax.set_ylabel("log quotient")
        ax.legend()
        return _save(fig, path)


def plot_preselection(before, after, path, n_max: int | None = None):
    before, after = np.asarray(before), np.asarray(after)
    n_max = n_max or int(np.quantile(before, 0.5))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        edges = np.arange(int(before.min()), n_max + 2, 4)
        ax.hist(before, bins=edges, histtype="step", label="before", color="0.5")
        ax.hist(after, bins=edges, histtype="step", label="after", color="C0")
        ax.set_xlabel("interval (clock periods)")
        ax.set_ylabel("count per 4 periods")
        ax.legend()
        return _save(fig, path)


def plot_proportions(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [r.name for r in report.results]
        props = [r.proportion for r in report.results]
        lo, hi = report.results[0].interval
        colors = ["C0" if r.verdict else "C3" for r in report.results]
        y = np.arange(len(names))
        ax.barh(y, props, color=colors)
        ax.axvline(lo, color="k", lw=0.8, ls="--")
        ax.axvline(min(hi, 1.0), color="k", lw=0.8, ls="--")
        ax.set_yticks(y, names)
        ax.set_xlim(max(0.0, lo - 0.05), 1.0)
        ax.set_xlabel("pass proportion")
        return _save(fig, path)

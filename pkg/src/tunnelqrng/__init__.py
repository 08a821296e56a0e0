"""Quantum random numbers from tunneling-interval detectors.

Device dark-count model, interval simulation and ingest, equal-mass interval
encoding, after-pulse fitting and pre-selection, min-entropy estimation,
Toeplitz extraction and a statistical test battery.
"""

from .afterpulse import (AfterpulseFit, SelectionReport, acceptance_probability, fit_afterpulse, log_quotient,
                         preselect, theoretical_pr)
from .bits import BitStream, symbols_to_bits
from .device import DcrBreakdown, DeviceParams, avalanche_probability, dark_count_rate, mean_multiplication
from .device import thermal_generation, tunneling_generation
from .encoder import BinTable, SymbolStream, build_bin_table, encode, symbol_histogram
from .entropy import EntropyReport, min_entropy, plan_extraction
from .errors import *  # noqa: F401,F403
from .randomness import TestReport, chi_square_gof, run_battery
from .source import IntervalStream, SourceModel, dcr_per_second, ingest_intervals, interval_pmf, sample_intervals
from .toeplitz import ToeplitzSpec, extract, seed_from_stream

__version__ = "0.1.0"


def __getattr__(name):
    # the pipeline pulls in matplotlib; load it only when asked for
    if name in ("PipelineConfig", "run_pipeline"):
        from . import pipeline
        return getattr(pipeline, name)
    raise AttributeError(name)

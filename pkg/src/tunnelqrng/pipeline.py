"""End-to-end run: source -> fit -> bins -> encode -> preselect -> entropy -> extract -> test.

Stages hand off through files in one output directory.  The manifest records
the full configuration, every seed, artifact SHA-256 hashes, stage timings
and throughput; it parses back as a config, so replaying it regenerates the
same artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import plotting
from .afterpulse import fit_afterpulse, fitted_curve, format_curve_csv, format_fit, preselect
from .bits import BitStream, symbols_to_bits
from .encoder import build_bin_table, encode, format_bin_table, format_histogram_csv, symbol_histogram, write_symbols
from .entropy import format_entropy, min_entropy, plan_extraction
from .errors import ConfigError, InvalidModel, TunnelQRNGError
from .kvtext import format_kv, parse_bool, parse_kv, write_kv
from .randomness import run_battery
from .source import (SourceModel, dcr_per_second, format_dcr_csv, ingest_intervals, sample_intervals,
                     write_intervals)
from .toeplitz import ENGINES, extract_stream, seed_from_stream, write_extracted

DEFAULT_PATHS = {
    "intervals": "intervals.bin",
    "dcr": "dcr.csv",
    "fit": "fit.txt",
    "log_quotient": "log_quotient.csv",
    "bins": "bins.txt",
    "symbols_raw": "symbols_raw.bin",
    "histogram_raw": "histogram_raw.csv",
    "preselected": "preselected.bin",
    "selection": "selection.txt",
    "symbols": "symbols.bin",
    "histogram": "histogram.csv",
    "entropy": "entropy.txt",
    "extracted": "extracted.bin",
    "report": "report.txt",
    "pvalues": "pvalues.csv",
    "fig_intervals": "fig_intervals.png",
    "fig_log_quotient": "fig_log_quotient.png",
    "fig_preselection": "fig_preselection.png",
    "fig_symbols_raw": "fig_symbols_raw.png",
    "fig_symbols": "fig_symbols.png",
    "fig_proportions": "fig_proportions.png",
    "manifest": "manifest.txt",
}

LOCK_NAME = ".pipeline.lock"
# manifest-only keys, skipped when a manifest is replayed as a config
MANIFEST_PREFIXES = ("sha256.", "time.", "stat.", "throughput.")


class StageFailure(TunnelQRNGError):
    def __init__(self, stage: str, error: Exception):
        super().__init__(f"stage {stage} failed: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


@dataclass
class PipelineConfig:
    """Every knob of a run.  Defaults are the documented simulation setup."""

    mode: str = "simulate"          # simulate | ingest
    input: str = ""                 # interval file for mode=ingest
    p0: float = 1e-3                # per-period tunneling probability
    ap_a: float = 5e-5              # after-pulse amplitude A
    ap_b: float = 0.01              # after-pulse decay B per period
    clock_hz: float = 5e8
    holdoff: int = 9                # hold-off in clock periods
    count: int = 1_000_000          # intervals to simulate
    k: int = 10                     # bits per symbol
    block: int = 1_000_000          # Toeplitz input block m
    margin: int = 100               # security margin in bits
    sim_seed: int = 1
    preselect_seed: int = 2
    toeplitz_seed: int = 3
    alpha: float = 0.01
    seq_len: int = 1_000_000
    engine: str = "fft"             # naive | packed | fft
    fit_bin_width: int = 32
    plots: bool = True
    out: str = "run"
    paths: dict = field(default_factory=lambda: dict(DEFAULT_PATHS))

    def __post_init__(self):
        if self.mode not in ("simulate", "ingest"):
            raise ConfigError(f"mode must be simulate or ingest, got {self.mode!r}")
        if self.mode == "ingest" and not self.input:
            raise ConfigError("mode=ingest needs input=<interval file>")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.count < 1 or self.block < 1 or self.seq_len < 1 or not 1 <= self.k <= 16:
            raise ConfigError("count, block and seq_len must be >= 1 and k in 1..16")
        if not 0.0 < self.alpha < 0.5:
            raise ConfigError("alpha must lie in (0, 0.5)")
        unknown = set(self.paths) - set(DEFAULT_PATHS)
        if unknown:
            raise ConfigError(f"unknown artifact paths: {sorted(unknown)}")
        paths = {**DEFAULT_PATHS, **self.paths}
        if len(set(paths.values())) != len(paths):
            raise ConfigError("artifact paths must be distinct")
        self.paths = paths
        if not self.clock_hz > 0:
            raise ConfigError("clock_hz must be > 0")
        try:
            self.model()
        except InvalidModel as exc:
            raise ConfigError(str(exc)) from None

    def model(self) -> SourceModel:
        return SourceModel(self.p0, self.ap_a, self.ap_b, 1.0 / self.clock_hz, self.holdoff)

    def path(self, name: str) -> str:
        return os.path.join(self.out, self.paths[name])

    def to_kv(self) -> dict[str, object]:
        kv = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "paths"}
        kv.update({f"path.{k}": v for k, v in self.paths.items()})
        return kv

    @classmethod
    def from_kv(cls, kv: dict[str, str], strict: bool = True) -> "PipelineConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        args: dict[str, object] = {}
        paths: dict[str, str] = {}
        for key, value in kv.items():
            if key.startswith(MANIFEST_PREFIXES):
                continue
            if key.startswith("path."):
                paths[key[5:]] = value
            elif key in types and key != "paths":
                args[key] = _coerce(key, value, types[key])
            elif strict:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**args, paths=paths)

    @classmethod
    def from_text(cls, text: str, strict: bool = True) -> "PipelineConfig":
        try:
            return cls.from_kv(parse_kv(text), strict)
        except TunnelQRNGError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def _coerce(key, value, typ):
    try:
        if typ in ("int", int):
            return int(float(value)) if "e" in value.lower() else int(value)
        if typ in ("float", float):
            return float(value)
        if typ in ("bool", bool):
            return parse_bool(value)
        return value
    except (ValueError, TunnelQRNGError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def seed_bits(seed: int, nbits: int) -> BitStream:
    """Toeplitz seed material from numpy's PCG64."""
    raw = np.random.Generator(np.random.PCG64(seed)).integers(0, 256, (nbits + 7) // 8, dtype=np.uint8)
    return BitStream(raw, 8 * raw.size).slice(0, nbits)


@dataclass
class RunResult:
    config: PipelineConfig
    manifest: dict
    fit: object = None
    selection: object = None
    entropy_raw: object = None
    entropy: object = None
    spec: object = None
    report: object = None


class _Lock:
    def __init__(self, directory):
        self.path = os.path.join(directory, LOCK_NAME)

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"another pipeline holds {self.path}") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        os.unlink(self.path)


def run_pipeline(config: PipelineConfig, log=None) -> RunResult:
    """Run every stage in order, writing all artifacts and the manifest."""
    os.makedirs(config.out, exist_ok=True)
    say = log or (lambda msg: None)
    timings: dict[str, float] = {}
    res = RunResult(config, {})
    P = config.path

    def stage(name, fn):
        t = time.perf_counter()
        say(f"[{name}] start")
        try:
            out = fn()
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageFailure(name, exc) from exc
        timings[name] = time.perf_counter() - t
        say(f"[{name}] done in {timings[name]:.2f}s")
        return out

    with _Lock(config.out):
        def source():
            if config.mode == "simulate":
                s = sample_intervals(config.model(), config.count, config.sim_seed)
            else:
                s = ingest_intervals(config.input)
            write_intervals(P("intervals"), s)
            return s
        stream = stage("source", source)

        stage("dcr", lambda: _write(P("dcr"), format_dcr_csv(dcr_per_second(stream))))

        def fit_stage():
            f = fit_afterpulse(stream, bin_width=config.fit_bin_width)
            _write(P("fit"), format_fit(f))
            _write(P("log_quotient"), format_curve_csv(*fitted_curve(stream, f)))
            return f
        res.fit = fit = stage("fit", fit_stage)

        def bins_stage():
            model = SourceModel(fit.p0_hat, clock_period=stream.clock_period,
                                holdoff_periods=stream.holdoff_periods)
            t = build_bin_table(model, config.k)
            _write(P("bins"), format_bin_table(t))
            return t
        table = stage("bins", bins_stage)

        def encode_raw():
            sym = encode(stream, table)
            write_symbols(P("symbols_raw"), sym)
            h = symbol_histogram(sym)
            _write(P("histogram_raw"), format_histogram_csv(h, table.bin_masses() * len(sym)))
            return h
        hist_raw = stage("encode_raw", encode_raw)

        def preselect_stage():
            kept, rep = preselect(stream, fit, config.preselect_seed)
            write_intervals(P("preselected"), kept)
            _write(P("selection"), format_kv(rep.to_kv()))
            return kept, rep
        kept, res.selection = stage("preselect", preselect_stage)

        def encode_stage():
            sym = encode(kept, table)
            write_symbols(P("symbols"), sym)
            h = symbol_histogram(sym)
            _write(P("histogram"), format_histogram_csv(h, table.bin_masses() * len(sym)))
            return sym, h
        symbols, hist = stage("encode", encode_stage)

        def entropy_stage():
            raw = min_entropy(hist_raw, config.k)
            cur = min_entropy(hist, config.k)
            kv = cur.to_kv()
            kv.update({f"raw_{k}": v for k, v in raw.to_kv().items()})
            _write(P("entropy"), format_kv(kv))
            return raw, cur
        res.entropy_raw, res.entropy = stage("entropy", entropy_stage)

        def extract_stage():
            plan = plan_extraction(res.entropy, config.block, config.margin)
            spec = seed_from_stream(seed_bits(config.toeplitz_seed, plan.seed_length), plan.m, plan.n,
                                    config.margin, f"pcg64 seed {config.toeplitz_seed}")
            bits = symbols_to_bits(symbols.symbols, config.k)
            out = extract_stream(bits, spec, config.engine)
            write_extracted(P("extracted"), out, spec)
            return spec, out
        res.spec, extracted = stage("extract", extract_stage)

        def test_stage():
            rep = run_battery(extracted, config.seq_len, config.alpha)
            _write(P("report"), rep.format_table())
            _write(P("pvalues"), rep.format_pvalues_csv())
            return rep
        res.report = stage("test", test_stage)

        if config.plots:
            def figures():
                plotting.plot_interval_histogram(stream.intervals, fit, P("fig_intervals"), stream.holdoff_periods)
                plotting.plot_log_quotient(*fitted_curve(stream, fit), P("fig_log_quotient"))
                plotting.plot_preselection(stream.intervals, kept.intervals, P("fig_preselection"))
                plotting.plot_symbol_histogram(hist_raw, P("fig_symbols_raw"), "before pre-selection")
                plotting.plot_symbol_histogram(hist, P("fig_symbols"), "after pre-selection")
                plotting.plot_proportions(res.report, P("fig_proportions"))
            stage("figures", figures)

        artifacts = {}
        for name in DEFAULT_PATHS:
            if name == "manifest" or not os.path.exists(P(name)):
                continue
            artifacts[f"sha256.{name}"] = sha256_file(P(name))
        if os.path.exists(P("intervals") + ".meta"):
            artifacts["sha256.intervals_meta"] = sha256_file(P("intervals") + ".meta")
        total = sum(timings.values())
        manifest = config.to_kv()
        manifest.update(artifacts)
        manifest.update({f"time.{k}": round(v, 6) for k, v in timings.items()})
        manifest.update({
            "stat.intervals": len(stream),
            "stat.kept": len(kept),
            "stat.min_entropy_raw": res.entropy_raw.min_entropy_per_symbol,
            "stat.min_entropy": res.entropy.min_entropy_per_symbol,
            "stat.extract_n": res.spec.n,
            "stat.output_bits": len(extracted),
            "stat.sequences": res.report.sequences,
            "stat.battery_pass": res.report.all_pass,
            "throughput.output_bytes_per_s": round(len(extracted) / 8 / max(total, 1e-9), 3),
            "throughput.extract_bytes_per_s": round(len(extracted) / 8 / max(timings["extract"], 1e-9), 3),
        })
        write_kv(P("manifest"), manifest, header="run manifest; replay with: tunnelqrng pipeline --config <this file>")
        res.manifest = manifest
    return res


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path

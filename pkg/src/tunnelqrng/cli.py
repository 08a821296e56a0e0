"""Command-line entry point: ``tunnelqrng <stage> ...``.

Every stage reads and writes files so it can run on its own.  Values come
from ``--config`` (key=value, same keys as a pipeline manifest) and are
overridden by flags.  Exit codes: 0 success, 1 stage failure, 2 config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import ConfigError, TunnelQRNGError
from .kvtext import format_kv
from .pipeline import PipelineConfig, StageFailure, run_pipeline, seed_bits

_D = PipelineConfig()

# flag -> config key
_OVERRIDES = {
    "p0": "p0", "ap_a": "ap_a", "ap_b": "ap_b", "k": "k", "block": "block", "margin": "margin",
    "alpha": "alpha", "holdoff": "holdoff", "count": "count", "clock_hz": "clock_hz",
    "engine": "engine", "seq_len": "seq_len", "mode": "mode", "input": "input",
    "fit_bin_width": "fit_bin_width",
}
_SEED_KEY = {"simulate": "sim_seed", "pipeline": "sim_seed", "preselect": "preselect_seed",
             "extract": "toeplitz_seed"}


def _common(p: argparse.ArgumentParser, *flags):
    p.add_argument("--config", help="key=value config file (a run manifest also works)")
    add = {
        "p0": lambda: p.add_argument("--p0", type=float, help=f"per-period probability (default {_D.p0})"),
        "ap": lambda: (p.add_argument("--ap-a", type=float, help=f"after-pulse amplitude A (default {_D.ap_a})"),
                       p.add_argument("--ap-b", type=float, help=f"after-pulse decay B per period (default {_D.ap_b})")),
        "holdoff": lambda: p.add_argument("--holdoff", type=int,
                                          help=f"hold-off in clock periods (default {_D.holdoff})"),
        "clock": lambda: p.add_argument("--clock-hz", type=float, help=f"clock rate (default {_D.clock_hz:g})"),
        "count": lambda: p.add_argument("--count", type=int, help=f"intervals to simulate (default {_D.count})"),
        "k": lambda: p.add_argument("--k", type=int, help=f"bits per symbol (default {_D.k})"),
        "block": lambda: p.add_argument("--block", type=int, help=f"extractor input block m (default {_D.block})"),
        "margin": lambda: p.add_argument("--margin", type=int, help=f"security margin bits (default {_D.margin})"),
        "seed": lambda: p.add_argument("--seed", type=int, help="seed for this stage's randomness "
                                       f"(defaults: simulate {_D.sim_seed}, preselect {_D.preselect_seed}, "
                                       f"extract {_D.toeplitz_seed})"),
        "alpha": lambda: p.add_argument("--alpha", type=float, help=f"significance level (default {_D.alpha})"),
        "engine": lambda: p.add_argument("--engine", choices=("naive", "packed", "fft"),
                                         help=f"Toeplitz engine (default {_D.engine})"),
        "seq_len": lambda: p.add_argument("--seq-len", type=int, help=f"bits per test sequence (default {_D.seq_len})"),
        "bin_width": lambda: p.add_argument("--fit-bin-width", type=int,
                                            help=f"log-quotient bin width in periods (default {_D.fit_bin_width})"),
    }
    for f in flags:
        add[f]()


def _config(args) -> PipelineConfig:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = PipelineConfig.from_text(text)
    else:
        cfg = PipelineConfig()
    changes = {key: getattr(args, flag) for flag, key in _OVERRIDES.items()
               if getattr(args, flag, None) is not None}
    seed = getattr(args, "seed", None)
    if seed is not None and args.cmd in _SEED_KEY:
        changes[_SEED_KEY[args.cmd]] = seed
    if args.cmd == "pipeline" and args.out:
        changes["out"] = args.out
    try:
        return dataclasses.replace(cfg, **changes)
    except TunnelQRNGError as exc:
        raise ConfigError(str(exc)) from None


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args, cfg):
    from .source import sample_intervals, write_intervals
    s = sample_intervals(cfg.model(), cfg.count, cfg.sim_seed)
    write_intervals(args.out, s)
    print(f"wrote {len(s)} intervals to {args.out}")


def cmd_ingest(args, cfg):
    from .source import ingest_intervals, write_intervals
    s = ingest_intervals(args.path)
    summary = {"count": len(s), "mean": float(s.intervals.mean()), "min": int(s.intervals.min()),
               "max": int(s.intervals.max()), "holdoff_periods": s.holdoff_periods, **s.metadata()}
    if args.copy:
        write_intervals(args.copy, s)
    _emit(format_kv(summary), args.out)


def cmd_dcr(args, cfg):
    if args.device:
        from .device import dark_count_rate, format_dcr, parse_device_profile
        with open(args.device, encoding="utf-8") as fh:
            params = parse_device_profile(fh.read())
        _emit(format_dcr(dark_count_rate(params)), args.out)
    elif args.intervals:
        from .source import dcr_per_second, format_dcr_csv, ingest_intervals
        _emit(format_dcr_csv(dcr_per_second(ingest_intervals(args.intervals))), args.out)
    else:
        raise ConfigError("dcr needs an interval file or --device <profile>")


def cmd_fit(args, cfg):
    from .afterpulse import fit_afterpulse, fitted_curve, format_curve_csv, format_fit
    from .source import ingest_intervals
    s = ingest_intervals(args.intervals)
    f = fit_afterpulse(s, bin_width=cfg.fit_bin_width)
    _emit(format_fit(f), args.out)
    curve = fitted_curve(s, f)
    if args.curve:
        _emit(format_curve_csv(*curve), args.curve)
    if args.plot:
        from .plotting import plot_log_quotient
        plot_log_quotient(*curve, args.plot)


def cmd_bins(args, cfg):
    from .encoder import build_bin_table, format_bin_table
    from .source import SourceModel
    p0 = cfg.p0
    if args.fit:
        from .afterpulse import parse_fit
        with open(args.fit, encoding="utf-8") as fh:
            p0 = parse_fit(fh.read()).p0_hat
        if args.p0 is not None:
            p0 = args.p0
    table = build_bin_table(SourceModel(p0, clock_period=1.0 / cfg.clock_hz, holdoff_periods=cfg.holdoff), cfg.k)
    _emit(format_bin_table(table), args.out)


def cmd_encode(args, cfg):
    from .encoder import encode, format_histogram_csv, parse_bin_table, symbol_histogram, write_symbols
    from .source import ingest_intervals
    with open(args.bins, encoding="utf-8") as fh:
        table = parse_bin_table(fh.read())
    s = ingest_intervals(args.intervals)
    if s.holdoff_periods != table.holdoff_periods:
        raise ConfigError(f"bin table hold-off {table.holdoff_periods} does not match the stream's "
                          f"{s.holdoff_periods}")
    sym = encode(s, table)
    write_symbols(args.out, sym)
    h = symbol_histogram(sym)
    if args.histogram:
        _emit(format_histogram_csv(h, table.bin_masses() * len(sym)), args.histogram)
    if args.plot:
        from .plotting import plot_symbol_histogram
        plot_symbol_histogram(h, args.plot)
    print(f"wrote {len(sym)} symbols to {args.out}")


def cmd_preselect(args, cfg):
    from .afterpulse import parse_fit, preselect
    from .source import ingest_intervals, write_intervals
    with open(args.fit, encoding="utf-8") as fh:
        fit = parse_fit(fh.read())
    kept, rep = preselect(ingest_intervals(args.intervals), fit, cfg.preselect_seed)
    write_intervals(args.out, kept)
    _emit(format_kv(rep.to_kv()), args.report)


def cmd_entropy(args, cfg):
    from .encoder import read_symbols, symbol_histogram
    from .entropy import format_entropy, min_entropy
    sym = read_symbols(args.symbols)
    _emit(format_entropy(min_entropy(symbol_histogram(sym), sym.k)), args.out)


def cmd_extract(args, cfg):
    from .bits import symbols_to_bits
    from .encoder import read_symbols
    from .entropy import parse_entropy, plan_extraction
    from .toeplitz import extract_stream, seed_from_stream, write_extracted
    with open(args.entropy, encoding="utf-8") as fh:
        report = parse_entropy(fh.read())
    plan = plan_extraction(report, cfg.block, cfg.margin)
    spec = seed_from_stream(seed_bits(cfg.toeplitz_seed, plan.seed_length), plan.m, plan.n, cfg.margin,
                            f"pcg64 seed {cfg.toeplitz_seed}")
    sym = read_symbols(args.symbols)
    out = extract_stream(symbols_to_bits(sym.symbols, sym.k), spec, cfg.engine)
    write_extracted(args.out, out, spec)
    print(f"m={spec.m} n={spec.n} blocks={len(out) // spec.n} output_bits={len(out)} -> {args.out}")


def cmd_test(args, cfg):
    from .randomness import run_battery
    from .toeplitz import read_extracted
    bits, _ = read_extracted(args.extracted)
    rep = run_battery(bits, cfg.seq_len, cfg.alpha)
    _emit(rep.format_table(), args.out)
    if args.pvalues:
        _emit(rep.format_pvalues_csv(), args.pvalues)
    if args.plot:
        from .plotting import plot_proportions
        plot_proportions(rep, args.plot)
    if not rep.all_pass:
        raise StageFailure("test", RuntimeError("battery verdict: at least one test outside the interval"))


def cmd_pipeline(args, cfg):
    res = run_pipeline(cfg, log=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    m = res.manifest
    print(f"min_entropy_raw={m['stat.min_entropy_raw']!r} min_entropy={m['stat.min_entropy']!r} "
          f"output_bits={m['stat.output_bits']} battery_pass={m['stat.battery_pass']}")
    print(f"manifest: {cfg.path('manifest')}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tunnelqrng", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="simulate detector intervals")
    _common(p, "p0", "ap", "holdoff", "clock", "count", "seed")
    p.add_argument("--out", default="intervals.bin", help="interval file (default intervals.bin)")

    p = sub.add_parser("ingest", help="read an interval file and print a summary")
    _common(p)
    p.add_argument("path")
    p.add_argument("--copy", help="also rewrite the stream to this interval file")
    p.add_argument("--out", help="summary file (default stdout)")

    p = sub.add_parser("dcr", help="dark counts per second, or the device-model breakdown")
    _common(p)
    p.add_argument("intervals", nargs="?")
    p.add_argument("--device", help="device profile (key=value) for the model breakdown")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("fit", help="fit the after-pulse model")
    _common(p, "bin_width")
    p.add_argument("intervals")
    p.add_argument("--out", help="fit report (default stdout)")
    p.add_argument("--curve", help="log-quotient CSV")
    p.add_argument("--plot", help="log-quotient PNG")

    p = sub.add_parser("bins", help="build the equal-mass bin table")
    _common(p, "p0", "holdoff", "clock", "k")
    p.add_argument("--fit", help="take p0 from this fit report")
    p.add_argument("--out", help="bin table (default stdout)")

    p = sub.add_parser("encode", help="encode intervals into symbols")
    _common(p)
    p.add_argument("intervals")
    p.add_argument("--bins", required=True)
    p.add_argument("--out", default="symbols.bin", help="symbol file (default symbols.bin)")
    p.add_argument("--histogram", help="histogram CSV")
    p.add_argument("--plot", help="histogram PNG")

    p = sub.add_parser("preselect", help="rejection-correct the intervals")
    _common(p, "seed")
    p.add_argument("intervals")
    p.add_argument("--fit", required=True)
    p.add_argument("--out", default="preselected.bin", help="interval file (default preselected.bin)")
    p.add_argument("--report", help="selection report (default stdout)")

    p = sub.add_parser("entropy", help="min-entropy of a symbol file")
    _common(p)
    p.add_argument("symbols")
    p.add_argument("--out", help="entropy report (default stdout)")

    p = sub.add_parser("extract", help="Toeplitz extraction")
    _common(p, "block", "margin", "seed", "engine")
    p.add_argument("symbols")
    p.add_argument("--entropy", required=True)
    p.add_argument("--out", default="extracted.bin", help="extracted-bits file (default extracted.bin)")

    p = sub.add_parser("test", help="statistical battery")
    _common(p, "alpha", "seq_len")
    p.add_argument("extracted")
    p.add_argument("--out", help="report table (default stdout)")
    p.add_argument("--pvalues", help="per-sequence p-value CSV")
    p.add_argument("--plot", help="pass-proportion PNG")

    p = sub.add_parser("pipeline", help="run every stage")
    _common(p, "p0", "ap", "holdoff", "clock", "count", "k", "block", "margin", "seed", "alpha",
            "engine", "seq_len", "bin_width")
    p.add_argument("--mode", choices=("simulate", "ingest"), help=f"default {_D.mode}")
    p.add_argument("--input", help="interval file for --mode ingest")
    p.add_argument("--out", help=f"output directory (default {_D.out})")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


COMMANDS = {
    "simulate": cmd_simulate, "ingest": cmd_ingest, "dcr": cmd_dcr, "fit": cmd_fit, "bins": cmd_bins,
    "encode": cmd_encode, "preselect": cmd_preselect, "entropy": cmd_entropy, "extract": cmd_extract,
    "test": cmd_test, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.cmd](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TunnelQRNGError, OSError) as exc:
        print(f"error: {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

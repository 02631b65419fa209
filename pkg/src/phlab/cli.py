"""``phlab`` command line.

Subcommands: simulate, analyze, estimate, predict, hom, atomic, report.
Failures exit nonzero and print one JSON object on stderr with keys
``error``, ``message``, ``file`` and ``line``.
"""

import argparse
import csv
import hashlib
import io
import json
import re
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .atomic import build_matrices, polarization_ratio_and_loss
from .config import ConfigError, load_config
from .correlation import CorrelationSet, CountAggregate, correlation_set
from .estimation import InvalidProbabilities, estimate_from_aggregate
from .hom import DegenerateSource, hom_from_g2, visibility_from_moments
from .montecarlo import heralded_sampler, run_experiment
from .noisemodel import NoiseMix, NoSolution, predict_scenario
from .report import PipelineMismatch, predictions_csv, run_report
from .timetag import TimeTagError, TruncatedRecord, analyze_files, write_stream

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4


class IoError(Exception):
    """Unreadable, unwritable or malformed input/output file."""

    def __init__(self, message, file=None, line=None):
        super().__init__(message)
        self.message = message
        self.file = str(file) if file is not None else None
        self.line = line


def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read: {exc.strerror}", path) from None


def _parse_csv(path, parser):
    text = _read_text(path)
    try:
        return parser(text)
    except (ValueError, KeyError, IndexError) as exc:
        msg = str(exc).strip("'\"")
        m = re.search(r"row (\d+)", msg)
        line = None
        if m:
            # parsers count data rows from the header; add back comment lines
            n_comments = sum(1 for ln in text.splitlines() if ln.startswith("#"))
            line = int(m.group(1)) + n_comments
        raise IoError(msg, path, line) from None


def _emit(text, out):
    """Write ``text`` to ``out`` or stdout."""
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write: {exc.strerror}", out) from None


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "trials", None) is not None:
        if args.trials <= 0:
            raise ConfigError("--trials must be positive")
        cfg = replace(cfg, trials=args.trials)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng=replace(cfg.rng, master_seed=args.seed))
    if getattr(args, "qfc", None) is not None:
        cfg = replace(cfg, qfc=args.qfc == "on")
    return cfg


def cmd_simulate(args):
    cfg = _config(args)
    tag = f"config_sha256={cfg.config_hash()}"
    tt_path = args.emit_timetags or cfg.emit_timetags
    res = run_experiment(cfg.source, cfg.trials, cfg.rng, qfc=cfg.qfc,
                         emit_timetags=bool(tt_path), windows=cfg.windows, nuisance=cfg.nuisance)
    if tt_path:
        try:
            write_stream(tt_path, res.record_chunks)
        except OSError as exc:
            raise IoError(f"cannot write: {exc.strerror}", tt_path) from None
    if args.aggregate_out:
        _emit(res.aggregate.to_csv(tag), args.aggregate_out)
    _emit(correlation_set(res.aggregate).to_csv(tag), args.correlations_out)
    return 0


def cmd_analyze(args):
    cfg = load_config(args.windows)
    tag = f"config_sha256={cfg.config_hash()}"
    for p in args.input:
        if not Path(p).is_file():
            raise IoError("no such file", p)
    try:
        agg, hist = analyze_files(args.input, cfg.windows, trials=args.trials)
    except TruncatedRecord as exc:
        raise IoError(str(exc), _failing_file(args.input, exc), None) from None
    except TimeTagError as exc:
        raise IoError(str(exc), _failing_file(args.input, exc), getattr(exc, "index", None)) from None
    except OSError as exc:
        raise IoError(f"cannot read: {exc.strerror}", exc.filename) from None
    if args.histogram_out:
        _emit(hist.to_csv(tag), args.histogram_out)
    if args.aggregate_out:
        _emit(agg.to_csv(tag), args.aggregate_out)
    _emit(correlation_set(agg).to_csv(tag), args.correlations_out)
    return 0


def _failing_file(paths, exc):
    return getattr(exc, "path", None) or (paths[0] if len(paths) == 1 else None)


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_estimate(args):
    agg = _parse_csv(args.input, CountAggregate.from_csv)
    est = estimate_from_aggregate(agg, args.detector_qe, args.filter_t)
    d = est.to_dict()
    d["input_sha256"] = _sha(args.input)
    _emit(json.dumps(d, indent=2, sort_keys=True, allow_nan=True) + "\n", args.out)
    return 0


def cmd_predict(args):
    cfg = load_config(args.config)
    cs = _parse_csv(args.correlations, CorrelationSet.from_csv)
    try:
        base = NoiseMix.from_correlations(cs)
    except AttributeError:
        raise IoError("correlation CSV lacks a statistic needed by the noise model",
                      args.correlations) from None
    preds = [predict_scenario(base, sc) for sc in cfg.scenarios]
    _emit(predictions_csv(preds, f"config_sha256={cfg.config_hash()}"), args.out)
    return 0


def cmd_hom(args):
    if args.g2 is not None:
        res = hom_from_g2(args.g2)
        out = res.to_dict()
    else:
        cfg = _config(args)
        sampler = heralded_sampler(cfg.source, qfc=cfg.qfc)
        res = visibility_from_moments(sampler, cfg.trials, cfg.rng.master_seed)
        out = {**res.to_dict(), "config_sha256": cfg.config_hash()}
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", None)
    return 0


def cmd_atomic(args):
    rl = polarization_ratio_and_loss()
    mats = build_matrices()
    if args.format == "json":
        d = {**rl, "matrices": {
            name: {"rows": list(m.row_basis), "cols": list(m.col_basis),
                   "entries": m.entries.tolist()}
            for name, m in mats.items()}}
        _emit(json.dumps(d, indent=2) + "\n", args.out)
        return 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "row", "col", "value"])
    w.writerow(["ratio", "", "", repr(rl["ratio"])])
    w.writerow(["loss", "", "", repr(rl["loss"])])
    for name, m in mats.items():
        for i, r in enumerate(m.row_basis):
            for j, c in enumerate(m.col_basis):
                w.writerow([name, r, c, repr(float(m.entries[i, j]))])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_report(args):
    cfg = _config(args)
    try:
        files = run_report(cfg, args.out_dir, args.detector_qe, args.filter_t)
    except OSError as exc:
        raise IoError(f"cannot write: {exc.strerror}", exc.filename) from None
    _emit(json.dumps({k: str(v) for k, v in sorted(files.items())}, indent=2) + "\n", None)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="phlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo run -> aggregate and correlations")
    s.add_argument("--config")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--qfc", choices=("on", "off"))
    s.add_argument("--emit-timetags", metavar="PATH", help=".phtt binary or .csv")
    s.add_argument("--aggregate-out")
    s.add_argument("--correlations-out", help="default: stdout")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="time-tag files -> histogram and correlations")
    a.add_argument("--input", nargs="+", required=True)
    a.add_argument("--windows", metavar="CONFIG", help="config file with a [windows] section")
    a.add_argument("--trials", type=int, help="default: whole cycles spanned by the records")
    a.add_argument("--histogram-out")
    a.add_argument("--aggregate-out")
    a.add_argument("--correlations-out", help="default: stdout")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("estimate", help="aggregate CSV -> efficiency JSON")
    e.add_argument("--input", required=True)
    e.add_argument("--detector-qe", type=float)
    e.add_argument("--filter-t", type=float)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("predict", help="correlation CSV -> scenario predictions")
    r.add_argument("--correlations", required=True)
    r.add_argument("--config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_predict)

    h = sub.add_parser("hom", help="two-source interference visibility")
    g = h.add_mutually_exclusive_group(required=True)
    g.add_argument("--g2", type=float)
    g.add_argument("--simulate", action="store_true")
    h.add_argument("--config")
    h.add_argument("--trials", type=int)
    h.add_argument("--seed", type=int)
    h.add_argument("--qfc", choices=("on", "off"))
    h.set_defaults(func=cmd_hom)

    t = sub.add_parser("atomic", help="polarization ratio, loss and transition matrices")
    t.add_argument("--format", choices=("json", "csv"), default="json")
    t.add_argument("--out")
    t.set_defaults(func=cmd_atomic)

    rp = sub.add_parser("report", help="full pipeline with tables, figures and provenance")
    rp.add_argument("--config")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--trials", type=int)
    rp.add_argument("--out-dir")
    rp.add_argument("--detector-qe", type=float, default=0.6)
    rp.add_argument("--filter-t", type=float, default=0.25)
    rp.set_defaults(func=cmd_report)
    return p


def _fail(kind, message, file=None, line=None, code=EXIT_DATA):
    json.dump({"error": kind, "message": message, "file": file, "line": line}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        return _fail("ConfigError", exc.message, exc.file, exc.line, EXIT_CONFIG)
    except IoError as exc:
        return _fail("IoError", exc.message, exc.file, exc.line, EXIT_IO)
    except (NoSolution, InvalidProbabilities, DegenerateSource, PipelineMismatch,
            ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end pipeline: simulate both configurations, write time tags,
re-analyze them from disk, estimate efficiencies, solve the noise model,
and write tables, figures and a provenance record."""

import hashlib
import json
import platform
import warnings
from pathlib import Path

import matplotlib
import numpy as np

from . import __version__
from .correlation import correlation_set
from .estimation import estimate_efficiencies, estimate_from_aggregate
from .montecarlo import expected_correlations, run_experiment, sweep_cross_correlation
from .noisemodel import NegativeNoiseWarning, NoiseMix, NoSolution, predict_scenario
from .plotting import plot_correlations, plot_histograms, plot_scenarios, plot_sweep
from .timetag import analyze_files, write_stream

# Observed values reported for the real experiment, kept for side-by-side display.
REFERENCE_OBSERVED = {
    "s_asv": 9.69, "s_ast": 4.09, "s_s": 1.58, "asv_asv": 1.99, "ast_ast": 1.12,
    "s_s_given_asv": 0.34, "s_s_given_ast": 0.71, "asv_asv_given_s": 0.47,
    "ast_ast_given_s": 0.54,
}


class PipelineMismatch(RuntimeError):
    """File-based analysis disagreed with the in-memory aggregate."""


def model_values(source):
    """Model g2 for every statistic: exact click statistics without
    conversion, and the noise-mixing prediction built on them with
    conversion (Poissonian noise)."""
    base = expected_correlations(source, qfc=False)
    mix = NoiseMix(source.zeta, 1.0, base["asv_asv"], base["s_asv"], base["s_s"],
                   base["s_s_given_asv"], base["asv_asv_given_s"])
    return {**base, **mix.predict()}


def predictions_csv(predictions, comment=None):
    lines = [f"# {comment}"] if comment else []
    lines.append("scenario,zeta,g2_noise,g2_ss_given_ast,g2_ast_ast_given_s")
    for p in predictions:
        lines.append(f"{p.scenario},{p.zeta!r},{p.g2_noise!r},{p.g2_ss_given_ast!r},"
                     f"{p.g2_ast_ast_given_s!r}")
    return "\n".join(lines) + "\n"


def summary_csv(rows, comment=None):
    def fmt(x):
        return "" if x is None else repr(float(x))

    lines = [f"# {comment}"] if comment else []
    lines.append("name,value,std_err,numerator_counts,model,reference")
    for r in rows:
        lines.append(",".join([r["name"], fmt(r["value"]), fmt(r["std_err"]),
                               str(r["numerator_counts"]), fmt(r["model"]), fmt(r["reference"])]))
    return "\n".join(lines) + "\n"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, text):
    Path(path).write_text(text)
    return path


def run_report(cfg, out_dir=None, detector_qe=0.6, filter_t=0.25):
    """Run the full pipeline; returns {label: path} of written files."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    tag = f"config_sha256={h}"
    files = {}

    aggs = {}
    hist = None
    for run, (label, qfc) in enumerate((("noqfc", False), ("qfc", True))):
        res = run_experiment(cfg.source, cfg.trials, cfg.rng.for_run(run), qfc=qfc,
                             emit_timetags=True, windows=cfg.windows, nuisance=cfg.nuisance)
        tt = out / f"timetags_{label}.phtt"
        write_stream(tt, res.record_chunks)
        files[f"timetags_{label}"] = tt
        agg, h_run = analyze_files([tt], cfg.windows, trials=cfg.trials)
        if agg != res.aggregate:
            raise PipelineMismatch(f"{label}: time-tag analysis differs from simulation")
        hist = h_run if hist is None else hist + h_run
        aggs[label] = agg
        files[f"aggregate_{label}"] = _write(out / f"aggregate_{label}.csv", agg.to_csv(tag))

    files["histogram"] = _write(out / "histogram.csv", hist.to_csv(tag))

    cs = correlation_set(aggs["noqfc"]).merged_with(correlation_set(aggs["qfc"]))
    files["correlations"] = _write(out / "correlations.csv", cs.to_csv(tag))
    files["correlations_jsonl"] = _write(out / "correlations.jsonl", cs.to_json_line(config_sha256=h) + "\n")

    model = model_values(cfg.source)
    rows = [{"name": n, "value": e.value, "std_err": e.std_err,
             "numerator_counts": e.numerator_counts, "model": model.get(n),
             "reference": REFERENCE_OBSERVED.get(n)} for n, e in cs.items()]
    files["summary"] = _write(out / "summary.csv", summary_csv(rows, tag))

    est = estimate_from_aggregate(aggs["noqfc"], detector_qe, filter_t)
    q = aggs["qfc"]
    if q.count("s") and q.count("t") and q.count("s", "t"):
        t = q.trials
        eta_ast = estimate_efficiencies(q.count("s") / t, q.count("t") / t, q.count("s", "t") / t).eta_asv
        est_d = {**est.to_dict(), "eta_ast": eta_ast}
    else:
        est_d = est.to_dict()
    est_d["config_sha256"] = h
    files["estimate"] = _write(out / "estimate.json", json.dumps(est_d, indent=2, sort_keys=True) + "\n")

    notes = []
    preds = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NegativeNoiseWarning)
        try:
            base = NoiseMix.from_correlations(cs)
            preds = [predict_scenario(base, sc) for sc in cfg.scenarios]
        except KeyError as exc:
            notes.append(f"no scenario predictions: statistic {exc} has no counts")
        except (NoSolution, ValueError) as exc:
            notes.append(f"no scenario predictions: {exc}")
    notes += [str(w.message) for w in caught]
    files["predictions"] = _write(out / "predictions.csv", predictions_csv(preds, tag))

    plot_histograms(hist, cfg.windows, out / "histograms.png", h)
    files["fig_histograms"] = out / "histograms.png"
    plot_correlations(rows, out / "correlations.png", h)
    files["fig_correlations"] = out / "correlations.png"
    if preds:
        plot_scenarios(preds, out / "scenarios.png", h)
        files["fig_scenarios"] = out / "scenarios.png"
    if cfg.sweep_mean_pairs:
        pts = sweep_cross_correlation(cfg.source, cfg.sweep_mean_pairs, cfg.trials,
                                      cfg.rng.for_run(2))
        lines = [f"# {tag}", "mean_pairs,value,std_err,numerator_counts"]
        lines += [f"{mp!r},{e.value!r},{e.std_err!r},{e.numerator_counts}" for mp, e in pts]
        files["sweep"] = _write(out / "sweep.csv", "\n".join(lines) + "\n")
        plot_sweep(pts, out / "sweep.png", h)
        files["fig_sweep"] = out / "sweep.png"

    prov = {
        "config_sha256": h,
        "config": cfg.to_dict(),
        "seed": cfg.rng.master_seed,
        "trials": cfg.trials,
        "versions": {"phlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "matplotlib": matplotlib.__version__},
        "notes": notes,
        "outputs": {k: {"file": Path(p).name, "sha256": _sha256(p)} for k, p in sorted(files.items())},
    }
    files["provenance"] = _write(out / "provenance.json", json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return files


"""Report figures, written as PNG files.

PNG output carries no timestamp, so identical inputs give identical bytes.
The config hash goes into the PNG ``Description`` field.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .channels import Channel  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
}


def _save(fig, path, config_hash):
    meta = {"Software": None}
    if config_hash:
        meta["Description"] = f"config_sha256={config_hash}"
    fig.savefig(path, format="png", metadata=meta)
    plt.close(fig)


def plot_histograms(hist, windows, path, config_hash=None, channels=(Channel.Ds1, Channel.Dv1, Channel.Dt1)):
    """Stop-signal occupancy per channel with the acceptance windows shaded."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(channels), 1, figsize=(5, 1.6 * len(channels)), sharex=True)
        axes = np.atleast_1d(axes)
        for ax, ch in zip(axes, channels):
            ax.step(hist.bin_starts, hist.counts[ch], where="post", color="k", lw=0.8)
            off, width = windows.window_for(ch)
            ax.axvspan(off, off + width, color="tab:blue", alpha=0.15, lw=0)
            ax.set_ylabel(f"{Channel(ch).name}\ncounts")
            ax.set_yscale("symlog", linthresh=1)
        axes[-1].set_xlabel("time after start signal (ns)")
        axes[-1].set_xlim(0, 1000)
        fig.tight_layout()
        _save(fig, path, config_hash)


def plot_correlations(rows, path, config_hash=None):
    """Simulated g2 with error bars against model and reference values.

    ``rows`` is a list of dicts with keys name, value, std_err, model and
    reference (the last two may be None).
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        x = np.arange(len(rows))
        val = np.array([r["value"] for r in rows])
        err = np.array([r["std_err"] if np.isfinite(r["std_err"]) else 0 for r in rows])
        ax.errorbar(x, val, yerr=err, fmt="o", color="k", ms=4, label="simulated")
        model = [r.get("model") for r in rows]
        ref = [r.get("reference") for r in rows]
        ax.plot([i for i, m in enumerate(model) if m is not None],
                [m for m in model if m is not None], "_", ms=14, mew=2, color="tab:red", label="model")
        ax.plot([i for i, m in enumerate(ref) if m is not None],
                [m for m in ref if m is not None], "x", color="tab:blue", label="reference")
        ax.axhline(1, color="0.6", lw=0.6, ls="--")
        ax.set_yscale("log")
        ax.set_xticks(x)
        ax.set_xticklabels([r["name"] for r in rows], rotation=40, ha="right")
        ax.set_ylabel("g2")
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path, config_hash)


def plot_scenarios(predictions, path, config_hash=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        x = np.arange(len(predictions))
        ax.bar(x - 0.18, [p.g2_ss_given_ast for p in predictions], 0.36, label="S | converted AS")
        ax.bar(x + 0.18, [p.g2_ast_ast_given_s for p in predictions], 0.36, label="converted AS | S")
        ax.axhline(1, color="0.5", lw=0.6, ls="--")
        ax.set_xticks(x)
        ax.set_xticklabels([f"{p.scenario}\n(zeta={p.zeta:.2f})" for p in predictions])
        ax.set_ylabel("heralded g2")
        ax.legend()
        fig.tight_layout()
        _save(fig, path, config_hash)


def plot_sweep(points, path, config_hash=None):
    """Cross correlation against mean pair number; ``points`` is [(mean_pairs, G2Estimate)]."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        mp = np.array([p[0] for p in points])
        ax.errorbar(mp, [p[1].value for p in points], yerr=[p[1].std_err for p in points],
                    fmt="o", color="k", ms=4)
        ax.plot(mp, 2 + 1 / mp, color="tab:red", lw=0.8, label="2 + 1/mean")
        ax.set_xscale("log")
        ax.set_xlabel("mean pair number per write pulse")
        ax.set_ylabel("cross g2")
        ax.legend()
        fig.tight_layout()
        _save(fig, path, config_hash)

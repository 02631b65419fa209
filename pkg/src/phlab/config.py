"""Run configuration: a TOML file with [source], [detectors], [windows],
[rng], [scenarios] and [io] sections.

Example::

    [source]
    p_ex = 0.1            # or mean_pairs
    eta_s = 0.06
    eta_asv = 0.07
    eta_conv = 0.43
    zeta = 0.55           # or noise_mean
    polarization_loss = false

    [detectors]
    dark_rate = { Ds1 = 0.0, Dt1 = 1e-6 }
    nuisance = [ { channel = "Ds1", time_ns = 850, width_ns = 20, probability = 1e-4 } ]

    [windows]
    s_offset_ns = 500
    s_width_ns = 250
    as_offset_ns = 300
    as_width_ns = 100
    histogram_bin_ns = 10

    [rng]
    seed = 42
    batch_size = 1048576

    [scenarios]
    baseline = 1.0
    collection_x10 = 10.0

    [io]
    trials = 10000000
    out_dir = "out"
    qfc = true
    sweep_mean_pairs = [0.02, 0.05, 0.1, 0.2]

Every key is optional; unknown keys are errors.
"""

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channels import Channel, parse_channel
from .montecarlo import NuisancePeak, RngPlan, SourceParams
from .noisemodel import DEFAULT_SCENARIOS, ScenarioSpec
from .timetag import Histogram, WindowConfig


class ConfigError(ValueError):
    def __init__(self, message, file=None, line=None):
        self.file = str(file) if file is not None else None
        self.line = line
        where = ""
        if self.file:
            where = f"{self.file}:{line}: " if line else f"{self.file}: "
        super().__init__(where + message)
        self.message = message


# Reference operating point (p_ex 0.1, eta_s 0.006, eta_asv 0.007) with both
# transmittances ten times larger, so that heralded coincidences are
# countable in 1e7 trials.
DEFAULT_SOURCE = {
    "p_ex": 0.1,
    "eta_s": 0.06,
    "eta_asv": 0.07,
    "eta_conv": 3.0 / 7.0,
    "zeta": 0.55,
    "polarization_loss": False,
}
DEFAULT_NUISANCE = (
    {"channel": "Ds1", "time_ns": 850, "width_ns": 20, "probability": 1e-4},
    {"channel": "Ds2", "time_ns": 850, "width_ns": 20, "probability": 1e-4},
    {"channel": "Dv1", "time_ns": 40, "width_ns": 20, "probability": 1e-4},
    {"channel": "Dv2", "time_ns": 40, "width_ns": 20, "probability": 1e-4},
    {"channel": "Dt1", "time_ns": 40, "width_ns": 20, "probability": 1e-4},
    {"channel": "Dt2", "time_ns": 40, "width_ns": 20, "probability": 1e-4},
)

SCHEMA = {
    "source": {"p_ex", "mean_pairs", "eta_s", "eta_asv", "eta_conv", "zeta", "noise_mean",
               "polarization_loss"},
    "detectors": {"dark_rate", "nuisance"},
    "windows": {"s_offset_ns", "s_width_ns", "as_offset_ns", "as_width_ns", "histogram_bin_ns"},
    "rng": {"seed", "batch_size"},
    "scenarios": None,  # free labels -> multipliers
    "io": {"trials", "out_dir", "qfc", "emit_timetags", "sweep_mean_pairs"},
}


@dataclass
class RunConfig:
    source: SourceParams
    windows: WindowConfig = field(default_factory=WindowConfig)
    rng: RngPlan = field(default_factory=lambda: RngPlan(42))
    scenarios: tuple = DEFAULT_SCENARIOS
    nuisance: tuple = ()
    trials: int = 10_000_000
    out_dir: str = "out"
    qfc: bool = True
    emit_timetags: str | None = None
    sweep_mean_pairs: tuple = ()
    path: str | None = None

    def to_dict(self):
        s = self.source
        return {
            "source": {"mean_pairs": s.mean_pairs, "eta_s": s.eta_s, "eta_asv": s.eta_asv,
                       "eta_conv": s.eta_conv, "noise_mean": s.noise_mean,
                       "polarization_loss": s.polarization_loss},
            "detectors": {
                "dark_rate": {c.name: s.dark_rate[c] for c in Channel},
                "nuisance": [{"channel": p.channel.name, "time_ns": p.time_ns,
                              "width_ns": p.width_ns, "probability": p.probability}
                             for p in self.nuisance],
            },
            "windows": {"s_offset_ns": self.windows.s_window[0], "s_width_ns": self.windows.s_window[1],
                        "as_offset_ns": self.windows.as_window[0],
                        "as_width_ns": self.windows.as_window[1],
                        "histogram_bin_ns": self.windows.histogram_bin_ns},
            "rng": {"seed": self.rng.master_seed, "batch_size": self.rng.batch_size},
            "scenarios": {sc.label: sc.zeta_multiplier for sc in self.scenarios},
            "io": {"trials": self.trials, "qfc": self.qfc,
                   "sweep_mean_pairs": list(self.sweep_mean_pairs)},
        }

    def config_hash(self):
        """SHA-256 of the resolved configuration, independent of file formatting."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _find_line(text, section, key):
    """1-based line of ``key`` inside ``[section]``, or of the ``[key]`` header
    when ``section`` is None; falls back to the section header."""
    if text is None:
        return None
    lines = text.splitlines()
    if section is None:
        for i, line in enumerate(lines, start=1):
            if re.match(rf"\s*\[\s*{re.escape(key)}\s*\]", line):
                return i
        return None
    current = None
    for i, line in enumerate(lines, start=1):
        m = re.match(r"\s*\[\s*([A-Za-z0-9_]+)\s*\]", line)
        if m:
            current = m.group(1)
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    for i, line in enumerate(lines, start=1):
        if re.match(rf"\s*\[\s*{re.escape(section)}\s*\]", line):
            return i
    return None


def load_config(path=None, text=None):
    """Parse and validate a configuration; ``path=None`` and ``text=None`` give defaults."""
    if path is not None and text is None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    data = {}
    if text is not None:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            line = getattr(exc, "lineno", None)
            if line is None:
                m = re.search(r"line (\d+)", str(exc))
                line = int(m.group(1)) if m else None
            raise ConfigError(f"invalid TOML: {exc}", path, line) from None
    return _build(data, path, text)


def _build(data, path, text):
    def err(msg, section=None, key=None):
        if key is not None:
            line = _find_line(text, section, key)
        elif section is not None:
            line = _find_line(text, None, section)
        else:
            line = None
        return ConfigError(msg, path, line)

    for sec, body in data.items():
        if sec not in SCHEMA:
            raise err(f"unknown section [{sec}]", None, sec)
        if not isinstance(body, dict):
            raise err(f"[{sec}] must be a table", None, sec)
        allowed = SCHEMA[sec]
        if allowed is not None:
            for key in body:
                if key not in allowed:
                    raise err(f"unknown key '{key}' in [{sec}]", sec, key)

    src = dict(data.get("source", {}))
    if not src:
        src = dict(DEFAULT_SOURCE)
    try:
        if "p_ex" in src and "mean_pairs" in src:
            raise err("give either p_ex or mean_pairs, not both", "source", "mean_pairs")
        if "zeta" in src and "noise_mean" in src:
            raise err("give either zeta or noise_mean, not both", "source", "noise_mean")
        for key in ("eta_s", "eta_asv"):
            if key not in src:
                raise err(f"[source] requires '{key}'", "source", None)
        det = data.get("detectors", {})
        dark = [0.0] * len(Channel)
        for name, rate in det.get("dark_rate", {}).items():
            try:
                dark[parse_channel(name)] = float(rate)
            except ValueError:
                raise err(f"unknown channel '{name}' in dark_rate", "detectors", "dark_rate") from None
        kw = dict(
            eta_s=float(src["eta_s"]), eta_asv=float(src["eta_asv"]),
            eta_conv=float(src.get("eta_conv", 1.0)),
            noise_mean=float(src.get("noise_mean", 0.0)),
            dark_rate=tuple(dark),
            polarization_loss=bool(src.get("polarization_loss", False)),
        )
        if "p_ex" in src:
            source = SourceParams.from_p_ex(float(src["p_ex"]), **kw)
        else:
            source = SourceParams(float(src.get("mean_pairs", 0.0)), **kw)
        if "zeta" in src:
            source = source.with_zeta(float(src["zeta"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise err(str(exc), "source", next(iter(src), None)) from None

    try:
        nuisance = tuple(
            NuisancePeak(parse_channel(p["channel"]), int(p["time_ns"]), int(p.get("width_ns", 10)),
                         float(p.get("probability", 1e-3)))
            for p in data.get("detectors", {}).get("nuisance", DEFAULT_NUISANCE))
    except (KeyError, ValueError, TypeError) as exc:
        raise err(f"bad nuisance peak: {exc}", "detectors", "nuisance") from None

    win = data.get("windows", {})
    try:
        windows = WindowConfig(
            (int(win.get("s_offset_ns", 500)), int(win.get("s_width_ns", 250))),
            (int(win.get("as_offset_ns", 300)), int(win.get("as_width_ns", 100))),
            int(win.get("histogram_bin_ns", 10)),
        )
        Histogram(windows.histogram_bin_ns)
    except ValueError as exc:
        raise err(str(exc), "windows", next(iter(win), None)) from None
    for peak in nuisance:
        if peak.overlaps(windows):
            raise err(f"nuisance peak on {peak.channel.name} overlaps its acceptance window",
                      "detectors", "nuisance")

    rng = data.get("rng", {})
    try:
        plan = RngPlan(int(rng.get("seed", 42)), int(rng.get("batch_size", 1 << 20)))
    except (ValueError, TypeError) as exc:
        raise err(str(exc), "rng", next(iter(rng), None)) from None

    scen = data.get("scenarios")
    if scen is None:
        scenarios = DEFAULT_SCENARIOS
    else:
        try:
            scenarios = tuple(ScenarioSpec(float(m), label) for label, m in scen.items())
        except (ValueError, TypeError) as exc:
            raise err(str(exc), "scenarios", next(iter(scen), None)) from None

    io = data.get("io", {})
    try:
        trials = int(io.get("trials", 10_000_000))
        if trials <= 0:
            raise ValueError("trials must be positive")
        sweep = tuple(float(x) for x in io.get("sweep_mean_pairs", ()))
    except (ValueError, TypeError) as exc:
        raise err(str(exc), "io", "trials") from None
    return RunConfig(
        source=source, windows=windows, rng=plan, scenarios=scenarios, nuisance=nuisance,
        trials=trials, out_dir=str(io.get("out_dir", "out")), qfc=bool(io.get("qfc", True)),
        emit_timetags=io.get("emit_timetags"), sweep_mean_pairs=sweep,
        path=str(path) if path is not None else None,
    )

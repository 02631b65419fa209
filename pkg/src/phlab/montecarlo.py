"""Trial-by-trial simulation of the heralded pair experiment.

One trial is one write slot.  A two-mode squeezed source emits n pairs with
P(n) = (1 - x) x**n, x = mean_pairs / (1 + mean_pairs).  Each Stokes and
anti-Stokes photon survives its path independently (binomial thinning).
With conversion enabled, Poissonian noise photons join the anti-Stokes mode
and the sum is thinned by the converter efficiency.  Every mode then meets a
50/50 splitter feeding two threshold detectors with Poissonian dark counts.

Trials are processed in batches.  Batch ``b`` draws from a generator seeded
by the master seed, the run index and ``b`` only, so results do not depend
on thread count or execution order.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .channels import GROUPS, N_CHANNELS, Channel
from .correlation import STANDARD_EVENTS, CountAggregate, event_fired
from .timetag import RECORD_DTYPE, SLOT_NS, SLOTS_PER_CYCLE, WindowConfig

POLARIZATION_TRANSMISSION = 33.0 / 41.0


@dataclass(frozen=True)
class SourceParams:
    """Physical model of one experimental configuration.

    Transmittances include collection, filtering and detector efficiency.
    ``noise_mean`` is the equivalent noise photon number per anti-Stokes
    window at the converter input.  ``dark_rate`` is the mean number of
    dark counts per window for each of the six channels.  With
    ``polarization_loss`` the anti-Stokes transmittance is reduced by the
    degenerate-sublevel polarization factor 33/41.
    """

    mean_pairs: float
    eta_s: float
    eta_asv: float
    eta_conv: float = 1.0
    noise_mean: float = 0.0
    dark_rate: tuple = (0.0,) * N_CHANNELS
    polarization_loss: bool = False

    def __post_init__(self):
        for name in ("eta_s", "eta_asv", "eta_conv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mean_pairs < 0 or self.noise_mean < 0:
            raise ValueError("mean_pairs and noise_mean must be non-negative")
        rates = tuple(float(r) for r in self.dark_rate)
        if len(rates) != N_CHANNELS or min(rates) < 0:
            raise ValueError("dark_rate needs six non-negative entries")
        object.__setattr__(self, "dark_rate", rates)

    @classmethod
    def from_p_ex(cls, p_ex, eta_s, eta_asv, **kw):
        """Build from the probability of at least one pair per slot."""
        if not 0 <= p_ex < 1:
            raise ValueError("p_ex must lie in [0, 1)")
        return cls(p_ex / (1.0 - p_ex), eta_s, eta_asv, **kw)

    @property
    def p_ex(self):
        return self.mean_pairs / (1.0 + self.mean_pairs)

    @property
    def eta_as_path(self):
        return self.eta_asv * (POLARIZATION_TRANSMISSION if self.polarization_loss else 1.0)

    @property
    def eta_ast(self):
        return self.eta_as_path * self.eta_conv

    @property
    def zeta(self):
        """Signal-to-noise photon ratio at the converter input."""
        signal = self.mean_pairs * self.eta_as_path
        return math.inf if self.noise_mean == 0 else signal / self.noise_mean

    def with_zeta(self, zeta):
        if zeta <= 0:
            raise ValueError("zeta must be positive")
        return replace(self, noise_mean=self.mean_pairs * self.eta_as_path / zeta)

    def scaled_efficiencies(self, factor):
        """Same source with both path transmittances multiplied by ``factor``."""
        return replace(self, eta_s=self.eta_s * factor, eta_asv=self.eta_asv * factor)


@dataclass(frozen=True)
class RngPlan:
    """Seeding rule: batch ``b`` of run ``run`` owns the child stream
    ``(master_seed; run, b, stream)``."""

    master_seed: int = 0
    batch_size: int = 1 << 20
    run: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def for_run(self, run):
        """Same seed and batching, independent streams."""
        return replace(self, run=run)

    def n_batches(self, n_trials):
        return -(-n_trials // self.batch_size)

    def batch_range(self, b, n_trials):
        start = b * self.batch_size
        return start, min(start + self.batch_size, n_trials)

    def generator(self, batch_index, stream=0):
        """Child generator for one batch; stream 1 feeds time-tag emission."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.run, batch_index, stream))
        return np.random.Generator(np.random.PCG64(ss))


def sample_pair_numbers(params, rng, size=None):
    """Joint pair number per trial; Stokes and anti-Stokes start equal."""
    if params.mean_pairs == 0:
        n = np.zeros(size if size is not None else (), dtype=np.int64)
    else:
        x = params.mean_pairs / (1.0 + params.mean_pairs)
        n = rng.geometric(1.0 - x, size) - 1
    return n, n


def apply_loss(n, eta, rng):
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if eta == 1.0:
        return np.asarray(n)
    return rng.binomial(n, eta)


def add_conversion_noise(n_as, params, rng, return_noise=False):
    """Add Poissonian noise photons, then thin signal and noise by eta_conv."""
    n_as = np.asarray(n_as)
    noise = rng.poisson(params.noise_mean, n_as.shape) if params.noise_mean > 0 else np.zeros_like(n_as)
    out = apply_loss(n_as + noise, params.eta_conv, rng)
    return (out, noise) if return_noise else out


def _dark(rate, size, rng):
    if rate <= 0:
        return np.zeros(size, dtype=bool)
    return rng.random(size) < -math.expm1(-rate)


def split_and_detect(n, dark_rates, rng):
    """50/50 split into two threshold detectors; returns (click_a, click_b)."""
    n = np.asarray(n)
    a = rng.binomial(n, 0.5)
    b = n - a
    da = _dark(dark_rates[0], n.shape, rng)
    db = _dark(dark_rates[1], n.shape, rng)
    return (a > 0) | da, (b > 0) | db


@dataclass
class TrialOutcome:
    """Per-trial photon numbers before detection and the six click flags.

    ``n_as`` is the anti-Stokes photon number reaching the splitter (after
    conversion when enabled); ``n_noise`` the noise photons added at the
    converter input.
    """

    n_pairs: np.ndarray
    n_s: np.ndarray
    n_as: np.ndarray
    n_noise: np.ndarray
    clicks: np.ndarray


def simulate_trials(params, size, rng, qfc=False):
    n, _ = sample_pair_numbers(params, rng, size)
    n_s = apply_loss(n, params.eta_s, rng)
    n_as = apply_loss(n, params.eta_as_path, rng)
    if qfc:
        n_as, noise = add_conversion_noise(n_as, params, rng, return_noise=True)
        as_chans = (Channel.Dt1, Channel.Dt2)
    else:
        noise = np.zeros_like(n_as)
        as_chans = (Channel.Dv1, Channel.Dv2)
    clicks = np.zeros((size, N_CHANNELS), dtype=bool)
    d = params.dark_rate
    clicks[:, Channel.Ds1], clicks[:, Channel.Ds2] = split_and_detect(
        n_s, (d[Channel.Ds1], d[Channel.Ds2]), rng)
    clicks[:, as_chans[0]], clicks[:, as_chans[1]] = split_and_detect(
        n_as, (d[as_chans[0]], d[as_chans[1]]), rng)
    return TrialOutcome(n, n_s, n_as, noise, clicks)


@dataclass(frozen=True)
class NuisancePeak:
    """Stray detections (pulse leakage) placed outside the acceptance window."""

    channel: Channel
    time_ns: int
    width_ns: int = 10
    probability: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        if self.width_ns <= 0 or self.time_ns < 0 or self.time_ns + self.width_ns > SLOT_NS:
            raise ValueError("nuisance peak must lie within the slot")
        if not 0 <= self.probability <= 1:
            raise ValueError("nuisance probability must lie in [0, 1]")

    def overlaps(self, windows):
        off, width = windows.window_for(self.channel)
        return self.time_ns < off + width and off < self.time_ns + self.width_ns


def _emit_records(clicks, first_slot, rng, windows, nuisance):
    slots_i, chans = np.nonzero(clicks)
    lo, hi = windows.bounds_per_channel()
    width = (hi - lo)[chans]
    # signal peak rises fast at the window start and decays over its width
    t = lo[chans] + np.minimum(np.floor(rng.triangular(0, 0.2, 1, len(chans)) * width), width - 1)
    parts = [(slots_i, chans, t.astype(np.int64))]
    for peak in nuisance:
        hit = np.nonzero(rng.random(len(clicks)) < peak.probability)[0]
        tt = peak.time_ns + rng.integers(0, peak.width_ns, len(hit))
        parts.append((hit, np.full(len(hit), int(peak.channel)), tt))
    s = np.concatenate([p[0] for p in parts]) + first_slot
    c = np.concatenate([p[1] for p in parts])
    t = np.concatenate([p[2] for p in parts])
    order = np.lexsort((c, t, s))
    rec = np.zeros(len(order), dtype=RECORD_DTYPE)
    rec["cycle"] = s[order] // SLOTS_PER_CYCLE
    rec["sequence"] = s[order] % SLOTS_PER_CYCLE
    rec["channel"] = c[order]
    rec["timestamp_ns"] = t[order]
    return rec


@dataclass
class BatchResult:
    aggregate: CountAggregate
    first_cycle: int = 0
    per_cycle: np.ndarray | None = None
    records: np.ndarray | None = None


def _per_cycle_counts(flags, first_slot, n, events):
    slots = np.arange(first_slot, first_slot + n)
    cyc = slots // SLOTS_PER_CYCLE
    first = int(cyc[0])
    rel = cyc - first
    ncyc = int(rel[-1]) + 1
    cols = [np.bincount(rel, minlength=ncyc)]
    for key in events:
        cols.append(np.bincount(rel, weights=event_fired(flags, key), minlength=ncyc))
    return first, np.stack(cols, axis=1).astype(np.int64)


def run_batch(params, n_trials, plan, batch_index, qfc=False, emit=False,
              windows=None, nuisance=(), per_cycle=False, events=STANDARD_EVENTS):
    start, stop = plan.batch_range(batch_index, n_trials)
    size = stop - start
    out = simulate_trials(params, size, plan.generator(batch_index), qfc)
    fired = out.clicks[out.clicks.any(axis=1)]
    result = BatchResult(CountAggregate.from_flags(fired, size, events))
    if per_cycle:
        result.first_cycle, result.per_cycle = _per_cycle_counts(out.clicks, start, size, events)
    if emit:
        result.records = _emit_records(
            out.clicks, start, plan.generator(batch_index, stream=1),
            windows or WindowConfig(), nuisance)
    return result


@dataclass
class ExperimentResult:
    aggregate: CountAggregate
    events: tuple = STANDARD_EVENTS
    per_cycle: np.ndarray | None = None
    record_chunks: list = field(default_factory=list)

    @property
    def records(self):
        if not self.record_chunks:
            return np.zeros(0, dtype=RECORD_DTYPE)
        return np.concatenate(self.record_chunks)


def thread_cap():
    """Worker count from PHLAB_THREADS, defaulting to the CPU count."""
    env = os.environ.get("PHLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"PHLAB_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def run_experiment(params, n_trials, plan=None, qfc=False, emit_timetags=False,
                   windows=None, nuisance=(), per_cycle=False, threads=None):
    """Simulate ``n_trials`` write slots, grouped 990 to a cycle.

    Returns an ExperimentResult whose aggregate is the exact sum of the
    per-batch aggregates.  ``per_cycle`` adds a (cycles, 1 + events) count
    matrix for cycle-level bootstrap; ``emit_timetags`` adds time-tag
    record chunks, one per batch, drawn from a separate stream so the
    counts are unaffected.
    """
    if n_trials <= 0:
        raise ValueError("n_trials must be positive")
    plan = plan or RngPlan()
    windows = windows or WindowConfig()
    for peak in nuisance:
        if peak.overlaps(windows):
            raise ValueError(f"nuisance peak on {peak.channel.name} overlaps its acceptance window")
    nb = plan.n_batches(n_trials)
    workers = min(threads or thread_cap(), nb)

    def job(b):
        return run_batch(params, n_trials, plan, b, qfc, emit_timetags, windows, nuisance, per_cycle)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            batches = list(pool.map(job, range(nb)))
    else:
        batches = [job(b) for b in range(nb)]

    result = ExperimentResult(CountAggregate.merge(*(b.aggregate for b in batches)))
    if per_cycle:
        ncyc = -(-n_trials // SLOTS_PER_CYCLE)
        m = np.zeros((ncyc, 1 + len(STANDARD_EVENTS)), dtype=np.int64)
        for b in batches:
            m[b.first_cycle:b.first_cycle + len(b.per_cycle)] += b.per_cycle
        result.per_cycle = m
    if emit_timetags:
        result.record_chunks = [b.records for b in batches]
    return result


def sweep_cross_correlation(params, mean_pairs_values, n_trials, plan=None, qfc=False):
    """Cross correlation versus mean pair number (write-power proxy)."""
    from .correlation import cross_g2

    pair = ("s", "t") if qfc else ("s", "v")
    out = []
    plan = plan or RngPlan()
    for i, mp in enumerate(mean_pairs_values):
        p = replace(params, mean_pairs=float(mp))
        agg = run_experiment(p, n_trials, plan.for_run(plan.run + 1 + i), qfc=qfc).aggregate
        out.append((float(mp), cross_g2(agg, pair)))
    return out


def heralded_sampler(params, qfc=True, batch_size=1 << 18):
    """Sampler of anti-Stokes photon numbers in slots where a Stokes detector clicked.

    The returned callable ``sampler(rng, size)`` is suitable for
    :func:`phlab.hom.visibility_from_moments`.
    """

    def sample(rng, size):
        got = []
        n = 0
        while n < size:
            out = simulate_trials(params, batch_size, rng, qfc)
            herald = out.clicks[:, Channel.Ds1] | out.clicks[:, Channel.Ds2]
            sel = out.n_as[herald]
            got.append(sel)
            n += len(sel)
        return np.concatenate(got)[:size]

    return sample


# Closed-form click statistics.  For a set D of channels, the probability
# that none of them clicks factorizes: pair photons are lost or routed
# independently, so E[z**n] of the geometric law gives the pair part, the
# Poisson generating function the noise part, and dark counts multiply in.


def _silent_probability(params, channels, qfc):
    chans = set(channels)
    n_s = sum(1 for c in (Channel.Ds1, Channel.Ds2) if c in chans)
    as_pair = (Channel.Dt1, Channel.Dt2) if qfc else (Channel.Dv1, Channel.Dv2)
    n_a = sum(1 for c in as_pair if c in chans)
    eta_a = params.eta_as_path * (params.eta_conv if qfc else 1.0)
    z = (1.0 - params.eta_s * n_s / 2.0) * (1.0 - eta_a * n_a / 2.0)
    x = params.mean_pairs / (1.0 + params.mean_pairs)
    p = (1.0 - x) / (1.0 - x * z)
    if qfc:
        p *= math.exp(-params.noise_mean * params.eta_conv * n_a / 2.0)
    return p * math.exp(-sum(params.dark_rate[c] for c in chans))


def expected_probability(params, key, qfc=False):
    """Exact probability per trial that every channel group in ``key`` fires."""
    # the anti-Stokes pair not in use never clicks
    idle = {Channel.Dv1, Channel.Dv2} if qfc else {Channel.Dt1, Channel.Dt2}
    groups = [set(GROUPS[g]) - idle for g in key]
    if any(not g for g in groups):
        return 0.0
    total = 0.0
    for k in range(len(groups) + 1):
        for subset in combinations(groups, k):
            total += (-1) ** k * _silent_probability(params, set().union(*subset), qfc)
    return max(total, 0.0)


def expected_correlations(params, qfc=False):
    """Exact threshold-detector g2 values of the simulated model."""
    P = lambda *k: expected_probability(params, k, qfc)  # noqa: E731
    a = "t" if qfc else "v"
    a1, a2 = a + "1", a + "2"
    tag = "ast" if qfc else "asv"
    return {
        f"s_{tag}": P("s", a) / (P("s") * P(a)),
        "s_s": P("s1", "s2") / (P("s1") * P("s2")),
        f"{tag}_{tag}": P(a1, a2) / (P(a1) * P(a2)),
        f"s_s_given_{tag}": P("s1", "s2", a) * P(a) / (P("s1", a) * P("s2", a)),
        f"{tag}_{tag}_given_s": P(a1, a2, "s") * P("s") / (P(a1, "s") * P(a2, "s")),
    }


def tmsv_g2(mean_pairs):
    """Photon-number (linear detection) g2 values of a lossy two-mode squeezed source.

    With mean pair number m the factorial moments of the geometric law are
    k! m**k, which gives cross 2 + 1/m, each marginal 2, and the heralded
    autocorrelation m (6 m + 4) / (2 m + 1)**2 in either direction.
    """
    m = mean_pairs
    heralded = m * (6 * m + 4) / (2 * m + 1) ** 2
    return {"cross": 2.0 + 1.0 / m, "auto": 2.0, "heralded": heralded}

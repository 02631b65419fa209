"""Second-order correlation estimators over coincidence-count aggregates.

Counts are threshold-detector events per write slot: a channel group
(``"s"`` = Ds1 or Ds2, ``"v1"`` = Dv1 alone, ...) either fires in a slot or
it does not, no matter how many tags it produced there.  Every estimator is
a ratio of such counts, e.g. the cross correlation

    g2 = N(s & v) * N_trials / (N(s) * N(v))

which is the probability form p_sv / (p_s p_v) with the trial count cancelled.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .channels import GROUPS, N_CHANNELS

LABEL_ORDER = ("s1", "s2", "s", "v1", "v2", "v", "t1", "t2", "t")

# Gehrels one-sided 84.13% upper limit for zero observed Poisson events.
ZERO_COUNT_UPPER = 1.841


class DegenerateCounts(ValueError):
    """A denominator count of an estimator is zero."""


def event_key(*groups):
    """Canonical, order-insensitive key for a coincidence of channel groups."""
    for g in groups:
        if g not in GROUPS:
            raise KeyError(f"unknown channel group {g!r}")
    if len(set(groups)) != len(groups):
        raise ValueError(f"repeated group in {groups}")
    return tuple(sorted(groups, key=LABEL_ORDER.index))


def _events(*specs):
    return tuple(event_key(*s) for s in specs)


SINGLES = _events(*[(g,) for g in LABEL_ORDER])
PAIRS = _events(
    ("s", "v"), ("s", "t"),
    ("s1", "s2"), ("v1", "v2"), ("t1", "t2"),
    ("s1", "v"), ("s2", "v"), ("s1", "t"), ("s2", "t"),
    ("v1", "s"), ("v2", "s"), ("t1", "s"), ("t2", "s"),
)
TRIPLES = _events(("s1", "s2", "v"), ("s1", "s2", "t"), ("v1", "v2", "s"), ("t1", "t2", "s"))
STANDARD_EVENTS = SINGLES + PAIRS + TRIPLES


def _group_masks():
    masks = {}
    for label, chans in GROUPS.items():
        m = np.zeros(N_CHANNELS, dtype=bool)
        m[list(chans)] = True
        masks[label] = m
    return masks


_MASKS = _group_masks()


def event_fired(flags, key):
    """Boolean per slot: every group in ``key`` fired.  ``flags`` is (slots, 6)."""
    flags = np.asarray(flags, dtype=bool)
    out = np.ones(flags.shape[0], dtype=bool)
    for g in key:
        out &= flags[:, _MASKS[g]].any(axis=1)
    return out


@dataclass(frozen=True)
class CountAggregate:
    """Trial count plus coincidence counts keyed by canonical group tuples.

    ``trials`` may be zero only for the empty aggregate used as the identity
    of :meth:`merge`; estimators reject it.
    """

    trials: int
    counts: Mapping[tuple, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, n in self.counts.items():
            k = event_key(*key)
            if k in clean:
                raise ValueError(f"duplicate event {k}")
            n = int(n)
            if n < 0:
                raise ValueError(f"negative count for {k}")
            clean[k] = n
        object.__setattr__(self, "counts", clean)
        object.__setattr__(self, "trials", int(self.trials))
        self._check()

    def _check(self):
        if self.trials < 0:
            raise ValueError("trials must be non-negative")
        for key, n in self.counts.items():
            if n > self.trials:
                raise ValueError(f"count {key}={n} exceeds trials={self.trials}")
            if len(key) > 1:
                for g in key:
                    single = self.counts.get((g,))
                    if single is not None and n > single:
                        raise ValueError(f"coincidence {key}={n} exceeds singles {g}={single}")

    @classmethod
    def empty(cls):
        return cls(0, {})

    @classmethod
    def from_flags(cls, flags, trials, events=STANDARD_EVENTS):
        """Count events over per-slot channel flags.

        ``flags`` holds one row per slot in which anything was detected; slots
        without detections only enter through ``trials``.
        """
        flags = np.asarray(flags, dtype=bool).reshape(-1, N_CHANNELS)
        if flags.shape[0] > trials:
            raise ValueError("more flagged slots than trials")
        return cls(trials, {k: int(event_fired(flags, k).sum()) for k in events})

    def count(self, *groups):
        key = event_key(*groups)
        try:
            return self.counts[key]
        except KeyError:
            raise KeyError(f"aggregate has no count for {'&'.join(key)}") from None

    def has(self, *groups):
        return event_key(*groups) in self.counts

    @property
    def singles(self):
        return {k[0]: v for k, v in self.counts.items() if len(k) == 1}

    @property
    def pair_coinc(self):
        return {k: v for k, v in self.counts.items() if len(k) == 2}

    @property
    def triple_coinc(self):
        return {k: v for k, v in self.counts.items() if len(k) == 3}

    def __add__(self, other):
        if not isinstance(other, CountAggregate):
            return NotImplemented
        keys = set(self.counts) | set(other.counts)
        if self.trials and other.trials and set(self.counts) != set(other.counts):
            raise ValueError("cannot merge aggregates over different event sets")
        return CountAggregate(
            self.trials + other.trials,
            {k: self.counts.get(k, 0) + other.counts.get(k, 0) for k in keys},
        )

    @staticmethod
    def merge(*aggs):
        total = CountAggregate.empty()
        for a in aggs:
            total = total + a
        return total

    def to_csv(self, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event", "count"])
        w.writerow(["trials", self.trials])
        for key in sorted(self.counts, key=_key_sort):
            w.writerow(["&".join(key), self.counts[key]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))
        if not rows or [c.strip() for c in rows[0]] != ["event", "count"]:
            raise ValueError("aggregate CSV must start with header 'event,count'")
        trials = None
        counts = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"row {lineno}: expected 2 columns, got {len(row)}")
            name, value = row[0].strip(), int(row[1])
            if name == "trials":
                trials = value
            else:
                counts[tuple(name.split("&"))] = value
        if trials is None:
            raise ValueError("aggregate CSV has no 'trials' row")
        return cls(trials, counts)


def _key_sort(key):
    return (len(key), [LABEL_ORDER.index(g) for g in key])


class G2Kind(str, Enum):
    cross = "cross"
    auto_unheralded = "auto_unheralded"
    auto_heralded = "auto_heralded"


@dataclass(frozen=True)
class G2Estimate:
    value: float
    std_err: float
    numerator_counts: int
    kind: G2Kind
    degenerate: bool = False


def g2_std_err(value, *counts):
    """Poisson-propagated standard error of a ratio of independent counts.

    The relative error is ``sqrt(sum(1/N))``.  Any zero count gives an
    infinite error.
    """
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    if any(c == 0 for c in counts):
        return math.inf
    return abs(value) * math.sqrt(sum(1.0 / c for c in counts))


def _ratio_estimate(num, num_scale, denominators, kind):
    # value = num * num_scale / prod(denominators), each count Poissonian
    for d in denominators:
        if d <= 0:
            raise DegenerateCounts(f"zero denominator count in {kind.value} estimator")
    per_count = num_scale / math.prod(float(d) for d in denominators)
    if num == 0:
        return G2Estimate(0.0, ZERO_COUNT_UPPER * per_count, 0, kind, degenerate=True)
    value = num * per_count
    return G2Estimate(value, g2_std_err(value, num, *denominators), int(num), kind)


def _trials(agg):
    if agg.trials <= 0:
        raise DegenerateCounts("aggregate has no trials")
    return agg.trials


def cross_g2(agg, pair=("s", "v")):
    """Cross correlation between two channel groups, e.g. ``("s", "t")``."""
    a, b = pair
    trials = _trials(agg)
    return _ratio_estimate(agg.count(a, b), trials, (agg.count(a), agg.count(b)), G2Kind.cross)


def auto_g2_unheralded(agg, split=("s1", "s2")):
    """Hanbury Brown-Twiss autocorrelation from the two arms of one splitter."""
    a, b = split
    trials = _trials(agg)
    return _ratio_estimate(
        agg.count(a, b), trials, (agg.count(a), agg.count(b)), G2Kind.auto_unheralded
    )


def auto_g2_heralded(agg, split=("s1", "s2"), herald="v"):
    """Autocorrelation of one mode conditioned on a herald click.

    Returns N(a & b & h) * N(h) / (N(a & h) * N(b & h)).  Zero triple
    coincidences is a legitimate outcome: value 0, error from the Poisson
    upper limit, ``degenerate`` set.
    """
    a, b = split
    _trials(agg)
    n_h = agg.count(herald)
    if n_h <= 0:
        raise DegenerateCounts("herald never fired")
    return _ratio_estimate(
        agg.count(a, b, herald), n_h, (agg.count(a, herald), agg.count(b, herald)),
        G2Kind.auto_heralded,
    )


# name -> (estimator, channel-group arguments); order fixes the CSV layout
STATISTICS = {
    "s_asv": (cross_g2, (("s", "v"),)),
    "s_ast": (cross_g2, (("s", "t"),)),
    "s_s": (auto_g2_unheralded, (("s1", "s2"),)),
    "asv_asv": (auto_g2_unheralded, (("v1", "v2"),)),
    "ast_ast": (auto_g2_unheralded, (("t1", "t2"),)),
    "s_s_given_asv": (auto_g2_heralded, (("s1", "s2"), "v")),
    "s_s_given_ast": (auto_g2_heralded, (("s1", "s2"), "t")),
    "asv_asv_given_s": (auto_g2_heralded, (("v1", "v2"), "s")),
    "ast_ast_given_s": (auto_g2_heralded, (("t1", "t2"), "s")),
}
STATISTIC_NAMES = tuple(STATISTICS)


@dataclass(frozen=True)
class CorrelationSet:
    """The Table-1 statistics; entries are None where channels were absent."""

    s_asv: G2Estimate | None = None
    s_ast: G2Estimate | None = None
    s_s: G2Estimate | None = None
    asv_asv: G2Estimate | None = None
    ast_ast: G2Estimate | None = None
    s_s_given_asv: G2Estimate | None = None
    s_s_given_ast: G2Estimate | None = None
    asv_asv_given_s: G2Estimate | None = None
    ast_ast_given_s: G2Estimate | None = None

    def items(self):
        for name in STATISTIC_NAMES:
            est = getattr(self, name)
            if est is not None:
                yield name, est

    def __getitem__(self, name):
        est = getattr(self, name)
        if est is None:
            raise KeyError(name)
        return est

    def merged_with(self, other):
        """Fill absent entries from ``other`` (e.g. combine runs with and without QFC)."""
        return CorrelationSet(**{
            n: getattr(self, n) if getattr(self, n) is not None else getattr(other, n)
            for n in STATISTIC_NAMES
        })

    def to_csv(self, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "std_err", "numerator_counts"])
        for name, est in self.items():
            w.writerow([name, repr(float(est.value)), repr(float(est.std_err)),
                        "" if est.numerator_counts is None else est.numerator_counts])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))
        header = [c.strip() for c in rows[0]] if rows else []
        if header != ["name", "value", "std_err", "numerator_counts"]:
            raise ValueError("correlation CSV must start with header 'name,value,std_err,numerator_counts'")
        entries = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"row {lineno}: expected 4 columns, got {len(row)}")
            name = row[0].strip()
            if name not in STATISTICS:
                raise ValueError(f"row {lineno}: unknown statistic {name!r}")
            kind = STATISTICS[name][0]
            # an empty count column means the source table did not report counts
            counts = int(row[3]) if row[3].strip() else None
            entries[name] = G2Estimate(
                float(row[1]), float(row[2]), counts, _KIND_OF[kind], degenerate=counts == 0
            )
        return cls(**entries)

    def to_json_line(self, **meta):
        """One JSON object on one line; ``meta`` keys (e.g. a config hash) go first."""
        record = dict(meta)
        record.update({
            name: {
                "value": est.value,
                "std_err": None if math.isinf(est.std_err) else est.std_err,
                "numerator_counts": est.numerator_counts,
                "kind": est.kind.value,
                "degenerate": est.degenerate,
            }
            for name, est in self.items()
        })
        return json.dumps(record, separators=(",", ":"))


_KIND_OF = {
    cross_g2: G2Kind.cross,
    auto_g2_unheralded: G2Kind.auto_unheralded,
    auto_g2_heralded: G2Kind.auto_heralded,
}


def _available(agg, fn, args):
    groups = set()
    for a in args:
        groups.update((a,) if isinstance(a, str) else a)
    return all(agg.has(g) and agg.count(g) > 0 for g in groups)


def correlation_set(agg):
    """Every statistic whose channel groups recorded at least one click."""
    out = {}
    for name, (fn, args) in STATISTICS.items():
        if not _available(agg, fn, args):
            continue
        try:
            out[name] = fn(agg, *args)
        except (DegenerateCounts, KeyError):
            continue
    return CorrelationSet(**out)


def bootstrap_std_err(count_matrix, events, statistic, n_resamples=1000, rng=None):
    """Standard deviation of a statistic over cycle-resampled aggregates.

    Args:
        count_matrix: (n_cycles, len(events) + 1) integer array whose first
            column is the per-cycle trial count and the rest per-cycle event
            counts in the order of ``events``.
        events: canonical event keys matching the matrix columns.
        statistic: callable taking a CountAggregate and returning G2Estimate.
        n_resamples: number of bootstrap replicas.
        rng: numpy Generator.

    Returns:
        float: bootstrap standard deviation over replicas that were not
        degenerate.
    """
    rng = np.random.default_rng(rng)
    m = np.asarray(count_matrix, dtype=np.int64)
    n_cycles = m.shape[0]
    weights = rng.multinomial(n_cycles, np.full(n_cycles, 1.0 / n_cycles), size=n_resamples)
    totals = weights @ m
    values = []
    for row in totals:
        agg = CountAggregate(int(row[0]), dict(zip(events, row[1:].tolist())))
        try:
            est = statistic(agg)
        except DegenerateCounts:
            continue
        if not est.degenerate:
            values.append(est.value)
    if len(values) < 2:
        return math.inf
    return float(np.std(values, ddof=1))

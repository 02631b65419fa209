"""Linearized inference of excitation probability and path transmittances.

At low excitation a two-mode squeezed source gives p_s = p_ex*eta_s,
p_v = p_ex*eta_asv and p_sv = p_ex*eta_s*eta_asv, which invert in closed
form.  Higher orders in p_ex show up as a bias of order p_ex.
"""

import math
import warnings
from dataclasses import dataclass


class InvalidProbabilities(ValueError):
    pass


class OutOfRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EfficiencyEstimate:
    p_ex: float
    eta_s: float
    eta_asv: float
    eta_ast: float | None = None
    collection_probability: float | None = None

    @property
    def out_of_range(self):
        vals = [self.p_ex, self.eta_s, self.eta_asv, self.eta_ast]
        return any(v is not None and not 0.0 <= v <= 1.0 for v in vals)

    def forward(self):
        """Probabilities implied by the estimate: (p_s, p_v, p_sv)."""
        return (self.p_ex * self.eta_s, self.p_ex * self.eta_asv,
                self.p_ex * self.eta_s * self.eta_asv)

    def to_dict(self):
        return {
            "p_ex": self.p_ex,
            "eta_s": self.eta_s,
            "eta_asv": self.eta_asv,
            "eta_ast": self.eta_ast,
            "collection_probability": self.collection_probability,
            "out_of_range": self.out_of_range,
        }


def estimate_efficiencies(p_s, p_v, p_sv, p_t=None, p_st=None,
                          detector_qe=None, filter_t=None):
    """Invert the linear singles/coincidence relations.

    ``p_t``/``p_st`` are the converted-mode singles and coincidence
    probabilities; when given, ``eta_ast`` is estimated the same way.
    ``detector_qe`` and ``filter_t`` fill in the collection probability.
    """
    if not (p_s > 0 and p_v > 0 and 0 < p_sv <= min(p_s, p_v)):
        raise InvalidProbabilities(
            f"need p_s, p_v > 0 and 0 < p_sv <= min(p_s, p_v); got {p_s}, {p_v}, {p_sv}")
    eta_asv = p_sv / p_s
    eta_s = p_sv / p_v
    p_ex = p_s * p_v / p_sv
    eta_ast = None
    if p_t is not None and p_st is not None:
        if not (p_t > 0 and 0 < p_st <= min(p_s, p_t)):
            raise InvalidProbabilities("invalid converted-mode probabilities")
        eta_ast = p_st / p_s
    coll = None
    if detector_qe is not None and filter_t is not None:
        coll = collection_probability(eta_asv, detector_qe, filter_t)
    est = EfficiencyEstimate(p_ex, eta_s, eta_asv, eta_ast, coll)
    if est.out_of_range:
        warnings.warn("an efficiency estimate lies outside [0, 1]", OutOfRangeWarning, stacklevel=2)
    return est


def estimate_from_aggregate(agg, detector_qe=None, filter_t=None):
    """Estimate from the union singles and coincidences of a CountAggregate."""
    t = agg.trials
    if t <= 0:
        raise InvalidProbabilities("aggregate has no trials")
    p_t = p_st = None
    if agg.has("t") and agg.has("s", "t") and agg.count("t") > 0:
        p_t, p_st = agg.count("t") / t, agg.count("s", "t") / t
    if agg.has("v") and agg.count("v") > 0:
        return estimate_efficiencies(
            agg.count("s") / t, agg.count("v") / t, agg.count("s", "v") / t,
            p_t, p_st, detector_qe, filter_t)
    if p_t is None:
        raise InvalidProbabilities("aggregate has neither v nor t detections")
    # converted run only: the t path plays the anti-Stokes role
    est = estimate_efficiencies(agg.count("s") / t, p_t, p_st)
    return EfficiencyEstimate(est.p_ex, est.eta_s, math.nan, est.eta_asv, None)


def collection_probability(eta_asv, detector_qe, filter_t):
    """Transmittance left after removing detector efficiency and filter."""
    for name, f in (("detector_qe", detector_qe), ("filter_t", filter_t)):
        if not 0 < f <= 1:
            raise ValueError(f"{name} must lie in (0, 1], got {f}")
    return eta_asv / (detector_qe * filter_t)

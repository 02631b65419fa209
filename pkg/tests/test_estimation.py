import math

import pytest

from phlab.correlation import CountAggregate
from phlab.estimation import (
    InvalidProbabilities,
    OutOfRangeWarning,
    collection_probability,
    estimate_efficiencies,
    estimate_from_aggregate,
)


def test_example_inversion():
    est = estimate_efficiencies(6e-4, 7e-4, 4.2e-6)
    assert est.p_ex == pytest.approx(0.1, rel=1e-12)
    assert est.eta_s == pytest.approx(0.006, rel=1e-12)
    assert est.eta_asv == pytest.approx(0.007, rel=1e-12)
    assert not est.out_of_range


def test_round_trip():
    est = estimate_efficiencies(6e-4, 7e-4, 4.2e-6)
    for a, b in zip(est.forward(), (6e-4, 7e-4, 4.2e-6)):
        assert a == pytest.approx(b, rel=1e-12)


def test_collection_probability():
    assert collection_probability(0.007, 0.6, 0.25) == pytest.approx(0.0467, abs=1e-4)
    est = estimate_efficiencies(6e-4, 7e-4, 4.2e-6, detector_qe=0.6, filter_t=0.25)
    assert est.collection_probability == pytest.approx(0.007 / 0.15)
    with pytest.raises(ValueError):
        collection_probability(0.007, 0, 0.25)


@pytest.mark.parametrize("args", [(0, 1e-3, 1e-6), (1e-3, 1e-3, 0), (1e-3, 1e-4, 2e-4)])
def test_invalid(args):
    with pytest.raises(InvalidProbabilities):
        estimate_efficiencies(*args)


def test_out_of_range_warns():
    with pytest.warns(OutOfRangeWarning):
        est = estimate_efficiencies(0.9, 0.9, 0.5)
    assert est.out_of_range


def test_from_aggregate():
    agg = CountAggregate(10**7, {("s",): 6000, ("v",): 7000, ("s", "v"): 42,
                                 ("t",): 2000, ("s", "t"): 12})
    est = estimate_from_aggregate(agg, 0.6, 0.25)
    assert est.eta_asv == pytest.approx(0.007)
    assert est.eta_ast == pytest.approx(0.002)
    assert est.p_ex == pytest.approx(0.1)
    d = est.to_dict()
    assert set(d) >= {"p_ex", "eta_s", "eta_asv", "eta_ast", "collection_probability"}


def test_from_converted_run_only():
    agg = CountAggregate(10**7, {("s",): 6000, ("v",): 0, ("s", "v"): 0,
                                 ("t",): 2000, ("s", "t"): 12})
    est = estimate_from_aggregate(agg)
    assert math.isnan(est.eta_asv)
    assert est.eta_ast == pytest.approx(0.002)

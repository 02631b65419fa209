import math

import numpy as np
import pytest

from phlab.channels import Channel
from phlab.correlation import STANDARD_EVENTS, auto_g2_unheralded, correlation_set, cross_g2
from phlab.montecarlo import (
    POLARIZATION_TRANSMISSION,
    NuisancePeak,
    RngPlan,
    SourceParams,
    apply_loss,
    expected_correlations,
    expected_probability,
    run_experiment,
    sample_pair_numbers,
    simulate_trials,
    split_and_detect,
    tmsv_g2,
)
from phlab.timetag import WindowConfig, validate


def mean_and_err(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(len(x))


def test_pair_number_mean():
    p = SourceParams(0.1, 1, 1)
    n, m = sample_pair_numbers(p, np.random.default_rng(0), 10**7)
    assert n is m
    mu, err = mean_and_err(n)
    assert abs(mu - 0.1) < 3 * err


def test_pair_number_is_thermal():
    n, _ = sample_pair_numbers(SourceParams(0.1, 1, 1), np.random.default_rng(1), 10**7)
    n = n.astype(float)
    f = n * (n - 1)
    a, b = f.mean(), n.mean()
    ratio = a / b**2
    cov = np.cov(np.vstack([f, n])) / len(n)
    grad = np.array([1 / b**2, -2 * a / b**3])
    assert abs(ratio - 2) < 3 * math.sqrt(grad @ cov @ grad)


def test_from_p_ex_inverts():
    p = SourceParams.from_p_ex(0.1, 0.06, 0.07)
    assert p.mean_pairs == pytest.approx(1 / 9)
    assert p.p_ex == pytest.approx(0.1)


def test_binomial_loss_mean():
    out = apply_loss(np.full(10**6, 10), 0.3, np.random.default_rng(2))
    mu, err = mean_and_err(out)
    assert abs(mu - 3.0) < 3 * err
    with pytest.raises(ValueError):
        apply_loss(np.ones(3), 1.5, np.random.default_rng(0))


def test_single_photon_never_gives_coincidence():
    a, b = split_and_detect(np.ones(10**5, int), (0, 0), np.random.default_rng(3))
    assert np.all(a ^ b)


def test_two_photon_coincidence_fraction():
    a, b = split_and_detect(np.full(10**6, 2), (0, 0), np.random.default_rng(4))
    mu, err = mean_and_err(a & b)
    assert abs(mu - 0.5) < 3 * err


def test_dark_counts_only():
    a, b = split_and_detect(np.zeros(10**6, int), (0.01, 0.0), np.random.default_rng(5))
    assert not b.any()
    mu, err = mean_and_err(a)
    assert abs(mu - (1 - math.exp(-0.01))) < 3 * err


def test_noise_only_converted_mode_is_poissonian():
    p = SourceParams(0.0, 0.06, 0.07, eta_conv=3 / 7, noise_mean=0.2)
    agg = run_experiment(p, 10**6, RngPlan(6), qfc=True).aggregate
    est = auto_g2_unheralded(agg, ("t1", "t2"))
    assert abs(est.value - 1.0) < 3 * est.std_err
    assert agg.count("v") == 0 and agg.count("s") == 0


def test_clicks_follow_photons():
    p = SourceParams(0.5, 0.5, 0.5)
    out = simulate_trials(p, 10**5, np.random.default_rng(7))
    s_click = out.clicks[:, Channel.Ds1] | out.clicks[:, Channel.Ds2]
    assert np.array_equal(s_click, out.n_s > 0)
    assert not out.clicks[:, [Channel.Dt1, Channel.Dt2]].any()
    assert np.all(out.n_s <= out.n_pairs) and np.all(out.n_as <= out.n_pairs)


def test_polarization_factor():
    p = SourceParams(0.1, 0.06, 0.07, polarization_loss=True)
    assert p.eta_as_path == pytest.approx(0.07 * 33 / 41)
    assert POLARIZATION_TRANSMISSION == pytest.approx(1 - 8 / 41)


def test_zeta_round_trip():
    p = SourceParams.from_p_ex(0.1, 0.06, 0.07, eta_conv=0.4).with_zeta(0.55)
    assert p.zeta == pytest.approx(0.55)
    assert SourceParams(0.1, 0.1, 0.1).zeta == math.inf


@pytest.mark.parametrize("bad", [dict(eta_s=1.2), dict(mean_pairs=-1), dict(dark_rate=(0,) * 5)])
def test_invalid_params(bad):
    kw = dict(mean_pairs=0.1, eta_s=0.1, eta_asv=0.1) | bad
    with pytest.raises(ValueError):
        SourceParams(**kw)


def test_oracle_approaches_linear_detection_limit():
    # at low efficiency threshold clicks count photons; corrections are O(eta)
    m = 1 / 9
    p = SourceParams(m, 1e-3, 1e-3)
    ex = expected_correlations(p)
    lin = tmsv_g2(m)
    assert lin["cross"] == pytest.approx(11.0)
    assert lin["heralded"] == pytest.approx(0.34711, abs=1e-5)
    assert ex["s_asv"] == pytest.approx(lin["cross"], rel=1e-2)
    assert ex["s_s"] == pytest.approx(2.0, rel=1e-2)
    assert ex["s_s_given_asv"] == pytest.approx(lin["heralded"], rel=1e-2)


def test_oracle_at_literal_operating_point():
    # p_ex 0.1, eta_s 0.006, eta_asv 0.007: heralding is non-classical and
    # the marginal stays thermal
    ex = expected_correlations(SourceParams.from_p_ex(0.1, 0.006, 0.007))
    assert ex["s_s_given_asv"] < 1
    assert ex["asv_asv_given_s"] < 1
    assert ex["asv_asv"] == pytest.approx(2.0, abs=0.01)


@pytest.mark.parametrize("qfc", [False, True])
def test_simulation_matches_exact_probabilities(qfc):
    p = SourceParams(0.3, 0.4, 0.5, eta_conv=0.6, noise_mean=0.1,
                     dark_rate=(1e-3, 0, 2e-3, 0, 1e-3, 0))
    n = 10**6
    agg = run_experiment(p, n, RngPlan(8), qfc=qfc).aggregate
    for key in STANDARD_EVENTS:
        prob = expected_probability(p, key, qfc)
        got = agg.counts[key]
        sigma = math.sqrt(n * prob * (1 - prob)) or 1.0
        assert abs(got - n * prob) < 4 * sigma, (key, got, n * prob)


def test_simulated_correlations_match_oracle():
    p = SourceParams.from_p_ex(0.2, 0.3, 0.3)
    cs = correlation_set(run_experiment(p, 10**6, RngPlan(9)).aggregate)
    ex = expected_correlations(p)
    for name, val in ex.items():
        assert abs(cs[name].value - val) < 3 * cs[name].std_err, name


def test_determinism_and_thread_independence():
    p = SourceParams.from_p_ex(0.1, 0.06, 0.07)
    plan = RngPlan(123, batch_size=50_000)
    a = run_experiment(p, 300_000, plan, threads=1).aggregate
    b = run_experiment(p, 300_000, plan, threads=4).aggregate
    c = run_experiment(p, 300_000, plan.for_run(1), threads=1).aggregate
    assert a == b
    assert a != c


def test_batching_preserves_trial_count_and_exact_merge():
    p = SourceParams.from_p_ex(0.1, 0.3, 0.3)
    plan = RngPlan(1, batch_size=1000)
    res = run_experiment(p, 12_345, plan, per_cycle=True)
    assert res.aggregate.trials == 12_345
    assert res.per_cycle.shape == (13, 1 + len(STANDARD_EVENTS))
    assert res.per_cycle[:, 0].tolist() == [990] * 12 + [12_345 - 12 * 990]


def test_emitted_records_are_valid_and_sorted():
    p = SourceParams.from_p_ex(0.2, 0.3, 0.3)
    cfg = WindowConfig()
    nuis = (NuisancePeak(Channel.Ds1, 850, 20, 0.01),)
    res = run_experiment(p, 50_000, RngPlan(2), emit_timetags=True, windows=cfg, nuisance=nuis)
    rec = res.records
    validate(rec)
    key = rec["cycle"].astype(np.int64) * 990 + rec["sequence"]
    assert np.all(np.diff(key) >= 0)
    stray = rec[(rec["channel"] == Channel.Ds1) & (rec["timestamp_ns"] >= 850)]
    assert len(stray) > 0 and np.all(stray["timestamp_ns"] < 870)


def test_overlapping_nuisance_rejected():
    with pytest.raises(ValueError, match="overlaps"):
        run_experiment(SourceParams(0.1, 0.1, 0.1), 10, RngPlan(),
                       nuisance=(NuisancePeak(Channel.Dv1, 350, 10),))


def test_emission_does_not_change_counts():
    p = SourceParams.from_p_ex(0.1, 0.3, 0.3)
    a = run_experiment(p, 100_000, RngPlan(4)).aggregate
    b = run_experiment(p, 100_000, RngPlan(4), emit_timetags=True).aggregate
    assert a == b


def test_cross_correlation_falls_with_pair_number():
    vals = []
    for i, m in enumerate((0.02, 0.2)):
        agg = run_experiment(SourceParams(m, 0.3, 0.3), 300_000, RngPlan(10, run=i)).aggregate
        vals.append(cross_g2(agg))
    assert vals[0].value - vals[1].value > 3 * math.hypot(vals[0].std_err, vals[1].std_err)

import numpy as np
import pytest

from phlab.hom import (
    DegenerateSource,
    fock_sampler,
    hom_from_g2,
    poisson_sampler,
    thermal_sampler,
    visibility_from_g2,
    visibility_from_moments,
)
from phlab.montecarlo import SourceParams, heralded_sampler


def test_visibility_from_g2():
    assert visibility_from_g2(0.54) == pytest.approx(0.649, abs=0.001)
    assert visibility_from_g2(0) == 1
    assert visibility_from_g2(1) == 0.5
    assert visibility_from_g2(2) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        visibility_from_g2(-0.1)


def test_hom_from_g2_consistent():
    r = hom_from_g2(0.54, mean_photons=0.3)
    assert 1 - r.p0 / r.p_inf == pytest.approx(r.visibility)
    assert r.to_dict()["visibility"] == r.visibility


def test_single_photons_interfere_perfectly():
    r = visibility_from_moments(fock_sampler(1), 1000, 0)
    assert r.p0 == 0 and r.visibility == 1.0


@pytest.mark.parametrize("sampler,expected", [(poisson_sampler(0.3), 0.5), (thermal_sampler(0.3), 1 / 3)])
def test_moment_visibility(sampler, expected):
    r = visibility_from_moments(sampler, 10**6, np.random.default_rng(1))
    assert abs(r.visibility - expected) < 3 * r.visibility_err


def test_degenerate_source():
    with pytest.raises(DegenerateSource):
        visibility_from_moments(fock_sampler(0), 100, 0)


def test_heralded_source_beats_classical_limit():
    p = SourceParams.from_p_ex(0.1, 0.3, 0.3)
    r = visibility_from_moments(heralded_sampler(p, qfc=False), 200_000, np.random.default_rng(2))
    assert r.visibility - 3 * r.visibility_err > 0.5

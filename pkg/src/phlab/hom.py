"""Two-source Hong-Ou-Mandel visibility.

Two independent, identical sources with mean photon number s and
autocorrelation g2 meet on a 50/50 splitter.  With perfect mode overlap the
normal-ordered output coincidence is (<:n1^2:> + <:n2^2:>)/4 at zero delay
and gains 2<n1><n2>/4 at long delay, so V = 1 - P0/Pinf = 1/(1 + g2).
"""

from dataclasses import dataclass, asdict

import numpy as np


class DegenerateSource(ValueError):
    pass


@dataclass(frozen=True)
class HomResult:
    p0: float
    p_inf: float
    visibility: float
    p0_err: float = 0.0
    p_inf_err: float = 0.0
    visibility_err: float = 0.0

    def to_dict(self):
        return asdict(self)


def visibility_from_g2(g2):
    if g2 < 0:
        raise ValueError("g2 must be non-negative")
    return 1.0 / (1.0 + g2)


def hom_from_g2(g2, mean_photons=1.0):
    """Exact HomResult (coincidences per unit detector efficiency)."""
    s2 = mean_photons ** 2
    return HomResult(s2 * g2 / 2, s2 * (g2 + 1) / 2, visibility_from_g2(g2))


def visibility_from_moments(sampler, n_trials, rng=None):
    """Estimate P0, Pinf and V from sampled input photon numbers.

    ``sampler(rng, size)`` returns integer photon numbers of one source; it
    is called once per input.  Normal-ordered moments come from
    <:n^2:> = <n(n-1)> and independence <:n1 n2:> = <n1><n2>.
    """
    rng = np.random.default_rng(rng)
    n1 = np.asarray(sampler(rng, n_trials), dtype=np.float64)
    n2 = np.asarray(sampler(rng, n_trials), dtype=np.float64)
    if n1.mean() == 0 or n2.mean() == 0:
        raise DegenerateSource("source never emits")
    f1, f2 = n1 * (n1 - 1), n2 * (n2 - 1)
    mu = np.array([f1.mean(), n1.mean(), f2.mean(), n2.mean()])
    # inputs are independent, so the covariance is block diagonal
    cov = np.zeros((4, 4))
    cov[:2, :2] = np.cov(np.vstack([f1, n1])) / len(n1)
    cov[2:, 2:] = np.cov(np.vstack([f2, n2])) / len(n2)

    a, m1, b, m2 = mu
    p0 = (a + b) / 4
    p_inf = (a + b + 2 * m1 * m2) / 4
    if p_inf == 0:
        raise DegenerateSource("no coincidences at long delay")
    vis = 1 - p0 / p_inf

    g_p0 = np.array([0.25, 0, 0.25, 0])
    g_pinf = np.array([0.25, m2 / 2, 0.25, m1 / 2])
    g_vis = -(g_p0 * p_inf - g_pinf * p0) / p_inf ** 2
    err = [float(np.sqrt(g @ cov @ g)) for g in (g_p0, g_pinf, g_vis)]
    return HomResult(float(p0), float(p_inf), float(vis), *err)


def thermal_sampler(mean_photons):
    x = mean_photons / (1.0 + mean_photons)

    def sample(rng, size):
        if mean_photons == 0:
            return np.zeros(size, dtype=np.int64)
        return rng.geometric(1.0 - x, size) - 1

    return sample


def poisson_sampler(mean_photons):
    def sample(rng, size):
        return rng.poisson(mean_photons, size)

    return sample


def fock_sampler(n):
    def sample(rng, size):
        return np.full(size, n, dtype=np.int64)

    return sample

"""How additive, signal-independent conversion noise reshapes g2 values.

``zeta`` is the ratio of the mean signal photon number at the converter
input to the equivalent input noise.  Because the conversion efficiency
multiplies signal and noise alike, it cancels from every normalized
correlation and never appears here.
"""

import math
import warnings
from dataclasses import dataclass


class NoSolution(ValueError):
    """Observed values admit no positive noise ratio."""


class NegativeNoiseWarning(UserWarning):
    pass


def mix_cross(g2_cross_in, zeta):
    """Cross correlation after mixing the heralded mode with noise."""
    if zeta < 0 or g2_cross_in < 0:
        raise ValueError("zeta and g2 must be non-negative")
    if math.isinf(zeta):
        return float(g2_cross_in)
    return (g2_cross_in * zeta + 1.0) / (zeta + 1.0)


def mix_auto(g2_signal_auto, g2_noise, zeta):
    """Autocorrelation of signal plus independent noise at ratio ``zeta``."""
    if min(g2_signal_auto, g2_noise, zeta) < 0:
        raise ValueError("inputs must be non-negative")
    return (zeta * zeta * g2_signal_auto + g2_noise + 2.0 * zeta) / (1.0 + zeta) ** 2


def mix_heralded_ss(g2_ss_heralded_in, g2_ss, g2_cross_in, g2_cross_out, zeta):
    """Autocorrelation of the Stokes mode heralded by the noisy converted mode.

    Pass ``g2_cross_out=None`` to derive it from ``mix_cross``.
    """
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    if g2_cross_out is None:
        g2_cross_out = mix_cross(g2_cross_in, zeta)
    if g2_cross_out == 0:
        raise ZeroDivisionError("g2_cross_out is zero")
    if math.isinf(zeta):
        return g2_ss_heralded_in * (g2_cross_in / g2_cross_out) ** 2
    w = zeta / (zeta + 1.0)
    return (g2_ss_heralded_in * (g2_cross_in / g2_cross_out) ** 2 * w
            + g2_ss / g2_cross_out ** 2 * (1.0 - w))


def heralded_zeta(zeta, g2_cross_in):
    """Signal-to-noise ratio conditioned on a Stokes click."""
    return g2_cross_in * zeta


def solve_zeta_gnoise(g2_cross_in, g2_cross_out, g2_signal_auto, g2_auto_out):
    """Invert ``mix_cross`` and ``mix_auto`` for ``(zeta, g2_noise)``.

    Raises NoSolution unless ``1 < g2_cross_out < g2_cross_in``.  A negative
    noise autocorrelation is returned as is, with a NegativeNoiseWarning.
    """
    if not (g2_cross_in > 1.0 and 1.0 < g2_cross_out < g2_cross_in):
        raise NoSolution(
            f"need 1 < g2_cross_out < g2_cross_in, got {g2_cross_out} and {g2_cross_in}"
        )
    zeta = (g2_cross_out - 1.0) / (g2_cross_in - g2_cross_out)
    g2_noise = g2_auto_out * (1.0 + zeta) ** 2 - zeta * zeta * g2_signal_auto - 2.0 * zeta
    if g2_noise < 0:
        warnings.warn(f"inverted g2_noise is negative ({g2_noise:.4g})", NegativeNoiseWarning,
                      stacklevel=2)
    return zeta, g2_noise


@dataclass(frozen=True)
class NoiseMix:
    """Noise ratio plus the correlation values measured without conversion.

    ``g2_signal_auto_heralded`` is the heralded autocorrelation of the
    unconverted anti-Stokes mode, needed to predict its converted
    counterpart.
    """

    zeta: float
    g2_noise: float
    g2_signal_auto: float
    g2_cross_in: float
    g2_ss: float
    g2_ss_heralded_in: float
    g2_signal_auto_heralded: float

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError("zeta must be non-negative")

    @classmethod
    def from_observed(cls, s_asv, s_ast, asv_asv, ast_ast, s_s, s_s_given_asv, asv_asv_given_s):
        zeta, g2_noise = solve_zeta_gnoise(s_asv, s_ast, asv_asv, ast_ast)
        return cls(zeta, g2_noise, asv_asv, s_asv, s_s, s_s_given_asv, asv_asv_given_s)

    @classmethod
    def from_correlations(cls, cs):
        """Solve for the noise from a CorrelationSet holding both runs."""
        v = {name: cs[name].value for name in (
            "s_asv", "s_ast", "asv_asv", "ast_ast", "s_s", "s_s_given_asv", "asv_asv_given_s")}
        return cls.from_observed(**v)

    def predict(self, zeta=None):
        """Converted-mode statistics at ``zeta`` (default: this mix's own)."""
        z = self.zeta if zeta is None else zeta
        cross_out = mix_cross(self.g2_cross_in, z)
        return {
            "s_ast": cross_out,
            "ast_ast": mix_auto(self.g2_signal_auto, self.g2_noise, z),
            "s_s_given_ast": mix_heralded_ss(
                self.g2_ss_heralded_in, self.g2_ss, self.g2_cross_in, cross_out, z),
            # Heralding raises the signal-to-noise ratio by g2_cross_in; this
            # substitution is asserted rather than derived from moments.
            "ast_ast_given_s": mix_auto(
                self.g2_signal_auto_heralded, self.g2_noise, heralded_zeta(z, self.g2_cross_in)),
        }


@dataclass(frozen=True)
class ScenarioSpec:
    zeta_multiplier: float
    label: str = ""

    def __post_init__(self):
        if not self.zeta_multiplier > 0:
            raise ValueError("zeta_multiplier must be positive")


@dataclass(frozen=True)
class ScenarioPrediction:
    scenario: str
    zeta: float
    g2_noise: float
    g2_ss_given_ast: float
    g2_ast_ast_given_s: float


def predict_scenario(base, spec):
    zeta = base.zeta * spec.zeta_multiplier
    p = base.predict(zeta)
    return ScenarioPrediction(
        spec.label, zeta, base.g2_noise, p["s_s_given_ast"], p["ast_ast_given_s"])


DEFAULT_SCENARIOS = (
    ScenarioSpec(1.0, "baseline"),
    ScenarioSpec(10.0, "collection_x10"),
    ScenarioSpec(1.25, "polarization"),
)

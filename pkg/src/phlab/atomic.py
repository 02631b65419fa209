"""Polarization selection loss from hyperfine dipole matrix products.

The write pulse drives F=2 -> F'=2 and the anti-Stokes photon leaves the
atom in F=1; the read pulse drives F=1 -> F'=2 and the Stokes photon returns
it to F=2.  Matrices act on the magnetic sublevel basis ordered from
m_F = +F down to -F and are fixed up to one common constant factor.
"""

from dataclasses import dataclass

import numpy as np

BASIS_F2 = (2, 1, 0, -1, -2)
BASIS_F1 = (1, 0, -1)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TransitionMatrix:
    entries: np.ndarray
    row_basis: tuple
    col_basis: tuple

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.shape not in {(5, 5), (3, 5), (5, 3)}:
            raise DimensionMismatch(f"unsupported shape {e.shape}")
        if e.shape != (len(self.row_basis), len(self.col_basis)):
            raise DimensionMismatch("basis labels do not match matrix shape")
        if not np.all(np.isfinite(e)):
            raise ValueError("non-finite matrix entry")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def T(self):
        return TransitionMatrix(self.entries.T, self.col_basis, self.row_basis)

    def scaled(self, c):
        return TransitionMatrix(c * self.entries, self.row_basis, self.col_basis)

    def __matmul__(self, other):
        if self.col_basis != other.row_basis:
            raise DimensionMismatch(f"cannot multiply {self.shape} by {other.shape}")
        return TransitionMatrix(self.entries @ other.entries, self.row_basis, other.col_basis)


def build_matrices():
    """The five transition matrices, keyed ``X_22p`` (F=2 -> F'=2, write),
    ``X_plus_12p``/``X_minus_12p`` (F'=2 -> F=1), ``X_plus_2p1`` (F=1 -> F'=2,
    read) and ``X_2p2`` (F'=2 -> F=2, Stokes emission)."""
    r = np.sqrt
    x22 = np.array([
        [0, r(1 / 12), 0, 0, 0],
        [r(1 / 12), 0, r(1 / 8), 0, 0],
        [0, r(1 / 8), 0, r(1 / 8), 0],
        [0, 0, r(1 / 8), 0, r(1 / 12)],
        [0, 0, 0, r(1 / 12), 0],
    ])
    x_plus = np.array([
        [r(1 / 4), 0, r(1 / 24), 0, 0],
        [0, r(1 / 8), 0, r(1 / 8), 0],
        [0, 0, r(1 / 24), 0, r(1 / 4)],
    ])
    # the second nonzero entry of every row flips sign
    x_minus = np.array([
        [r(1 / 4), 0, -r(1 / 24), 0, 0],
        [0, r(1 / 8), 0, -r(1 / 8), 0],
        [0, 0, r(1 / 24), 0, -r(1 / 4)],
    ])
    X_22p = TransitionMatrix(x22, BASIS_F2, BASIS_F2)
    X_plus_12p = TransitionMatrix(x_plus, BASIS_F1, BASIS_F2)
    return {
        "X_22p": X_22p,
        "X_plus_12p": X_plus_12p,
        "X_minus_12p": TransitionMatrix(x_minus, BASIS_F1, BASIS_F2),
        "X_plus_2p1": X_plus_12p.T,
        "X_2p2": X_22p,
    }


def path_matrix(read_pol, matrices=None):
    """Sublevel map for H-polarized (``"plus"``) or V-polarized (``"minus"``)
    anti-Stokes emission followed by the V-polarized Stokes return."""
    m = build_matrices() if matrices is None else matrices
    emit = {"plus": m["X_plus_12p"], "minus": m["X_minus_12p"]}[read_pol]
    return m["X_2p2"] @ m["X_plus_2p1"] @ emit @ m["X_22p"]


def _weight(x):
    e = x.entries
    return float(np.trace(e.T @ e))


def polarization_ratio_and_loss(matrices=None):
    """H-to-V anti-Stokes intensity ratio for uniformly mixed initial
    sublevels, and the fraction of heralded photons lost to V."""
    w_h = _weight(path_matrix("plus", matrices))
    w_v = _weight(path_matrix("minus", matrices))
    return {"ratio": w_h / w_v, "loss": w_v / (w_h + w_v)}


def sample_polarization_ratio(n_samples, rng=None, matrices=None):
    """Monte Carlo over uniformly drawn initial sublevels.

    Each draw picks m_F and accumulates the output probability
    ``|X e_m|^2`` for both paths.  Returns (ratio, std_err).
    """
    rng = np.random.default_rng(rng)
    xh = path_matrix("plus", matrices).entries
    xv = path_matrix("minus", matrices).entries
    col_h = (xh ** 2).sum(axis=0)
    col_v = (xv ** 2).sum(axis=0)
    m = rng.integers(0, len(BASIS_F2), size=n_samples)
    h, v = col_h[m], col_v[m]
    ratio = h.mean() / v.mean()
    # delta method for a ratio of correlated means
    cov = np.cov(np.vstack([h, v])) / n_samples
    grad = np.array([1 / v.mean(), -h.mean() / v.mean() ** 2])
    return float(ratio), float(np.sqrt(grad @ cov @ grad))

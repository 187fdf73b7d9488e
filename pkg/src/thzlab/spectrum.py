"""Sub-band partition arithmetic and DAMC sub-band assignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidConfig


@dataclass(frozen=True)
class SpectrumConfig:
    """Spectrum of interest starting at ``epsilon_f`` (Hz), split into ``n_s`` sub-bands."""

    epsilon_f: float
    b_tot: float
    b_max: float
    n_s: int

    def __post_init__(self):
        if self.n_s < 1:
            raise InvalidConfig("n_s must be >= 1")
        if self.epsilon_f <= 0:
            raise InvalidConfig("epsilon_f must be positive")
        if not 0 < self.b_tot <= self.n_s * self.b_max * (1 + 1e-12):
            raise InvalidConfig(
                f"need 0 < b_tot <= n_s * b_max (b_tot={self.b_tot:g}, n_s*b_max={self.n_s * self.b_max:g})"
            )

    @property
    def f_hi(self):
        """Highest frequency any box-feasible partition can reach."""
        return self.epsilon_f + self.n_s * self.b_max


def mapping_matrix(n_s):
    """A = L - I/2, so that centre frequencies are ``A @ b + epsilon_f``."""
    if n_s < 1:
        raise InvalidConfig("n_s must be >= 1")
    return np.tril(np.ones((n_s, n_s))) - 0.5 * np.eye(n_s)


def centers(config, b):
    """Centre frequencies for bandwidths ``b``; works on a trailing axis of length n_s."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1:] != (config.n_s,):
        raise DimensionMismatch(f"expected {config.n_s} bandwidths, got shape {b.shape}")
    return config.epsilon_f + np.cumsum(b, axis=-1) - 0.5 * b


def edges(config, b):
    """(lower, upper) band edges for each sub-band."""
    f = centers(config, b)
    b = np.asarray(b, dtype=float)
    return f - 0.5 * b, f + 0.5 * b


@dataclass(frozen=True)
class SpectrumPartition:
    config: SpectrumConfig
    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.shape != (self.config.n_s,):
            raise DimensionMismatch(f"expected {self.config.n_s} bandwidths, got shape {b.shape}")
        tol = 1e-12 * self.config.b_max
        if np.any(b < -tol) or np.any(b > self.config.b_max + tol):
            raise InvalidConfig("bandwidths must satisfy 0 <= b <= b_max")
        b.flags.writeable = False
        object.__setattr__(self, "b", b)

    @property
    def f(self):
        return centers(self.config, self.b)

    @classmethod
    def equal(cls, config):
        return cls(config, np.full(config.n_s, config.b_tot / config.n_s))


def mean_absorption(model, partition, nodes=33):
    """Mean of k(f) over each sub-band, by Gauss-Legendre quadrature.

    Zero-width sub-bands report k at their (degenerate) centre.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    f = partition.f[:, None] + 0.5 * partition.b[:, None] * x[None, :]
    return model(f) @ w / 2.0


def damc_pairing(d_sorted, model, partition, nodes=33):
    """Assign sub-bands to users: i-th nearest user gets the i-th most absorbing sub-band.

    Returns ``perm`` with ``perm[i]`` the sub-band index (0-based) of user ``i``.
    """
    d_sorted = np.asarray(d_sorted, dtype=float)
    if d_sorted.shape != (partition.config.n_s,):
        raise DimensionMismatch("need one distance per sub-band")
    if np.any(np.diff(d_sorted) < 0):
        raise InvalidConfig("distances must be sorted ascending")
    k_mean = mean_absorption(model, partition, nodes)
    # stable sort keeps frequency order among equal means
    return np.argsort(-k_mean, kind="stable")

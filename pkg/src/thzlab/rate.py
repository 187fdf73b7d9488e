"""Per-sub-band data rates, the proportional-fair objective and R_AG.

The quadrature path integrates

    log2(1 + p * rho * exp(-k(f) d) / (f^2 d^2 b))

over each sub-band.  The closed-form path evaluates the same integrand at
the centre frequency with an exponential k(f), i.e. a midpoint rule, which
is accurate for narrow sub-bands.

All array functions broadcast over leading axes; the trailing axis indexes
sub-bands.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .absorption import ExponentialAbsorption
from .errors import DimensionMismatch, InvalidConfig, NonFiniteIntegrand
from .spectrum import centers, mapping_matrix

LN2 = math.log(2.0)
#: Rates are floored at this value (bit/s) before taking logs in the objective.
R_FLOOR = 1.0
#: Lower clamp on the absorption exponent -k d.
EXPONENT_FLOOR = -700.0


class Rule(enum.Enum):
    GAUSS_LEGENDRE = "gauss_legendre"
    COMPOSITE_SIMPSON = "composite_simpson"


@dataclass(frozen=True)
class QuadratureSpec:
    rule: Rule = Rule.GAUSS_LEGENDRE
    nodes_per_subband: int = 33
    refinement_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        if self.nodes_per_subband < 3:
            raise InvalidConfig("nodes_per_subband must be >= 3")
        if self.rule is Rule.COMPOSITE_SIMPSON and self.nodes_per_subband % 2 == 0:
            raise InvalidConfig("composite Simpson needs an odd node count")

    def nodes(self):
        """Nodes on [-1, 1] and weights summing to 2."""
        return _nodes(self.rule, self.nodes_per_subband)

    def refined(self):
        """Same rule with the node count roughly doubled (33 -> 65)."""
        return QuadratureSpec(self.rule, 2 * self.nodes_per_subband - 1, self.refinement_tol)


@lru_cache(maxsize=None)
def _nodes(rule, n):
    if rule is Rule.GAUSS_LEGENDRE:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x = np.linspace(-1.0, 1.0, n)
        w = np.ones(n)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= (2.0 / (n - 1)) / 3.0
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@dataclass(frozen=True)
class RateResult:
    r: np.ndarray
    objective_e: float
    r_ag: float


def objective(r):
    """Proportional-fair objective sum(log r) with the R_FLOOR convention."""
    return np.sum(np.log(np.maximum(r, R_FLOOR)), axis=-1)


def _prepare(scenario, p, b, d):
    p = np.asarray(p, dtype=float)
    b = np.asarray(b, dtype=float)
    d = scenario.d if d is None else np.asarray(d, dtype=float)
    n = scenario.n_s
    for name, arr in (("p", p), ("b", b), ("d", d)):
        if arr.shape[-1:] != (n,):
            raise DimensionMismatch(f"{name} must have a trailing axis of length {n}, got {arr.shape}")
    return p, b, d


def _log_snr(scenario, d, p, b, f, k):
    """log of the integrand SNR at frequencies ``f`` (trailing node axis)."""
    expo = np.maximum(-k * d[..., None], EXPONENT_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (np.log(p)[..., None] + math.log(scenario.budget.rho) + expo
                - 2.0 * np.log(f) - 2.0 * np.log(d)[..., None] - np.log(b)[..., None])


def rates_at(scenario, quad, p, b, f, d, with_dp=False):
    """Quadrature rates for sub-bands with explicit centres ``f``.

    ``log1p(snr)`` is evaluated as ``logaddexp(0, log snr)`` so that very
    narrow sub-bands (huge SNR density) stay finite.
    """
    x, w = quad.nodes()
    fq = f[..., None] + 0.5 * b[..., None] * x
    k = scenario.absorption(fq)
    ls = _log_snr(scenario, d, p, b, fq, k)
    active = (b > 0) & (p > 0)
    with np.errstate(invalid="ignore"):
        r = np.where(active, 0.5 * b * (np.logaddexp(0.0, ls) @ w) / LN2, 0.0)
    if not np.all(np.isfinite(r)):
        raise NonFiniteIntegrand("rate integrand is not finite")
    if not with_dp:
        return r
    # d/dp log2(1 + snr) = exp(log snr - log p - log(1 + snr)) / ln2
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        lg = ls - np.log(p)[..., None] if np.all(p > 0) else _log_snr(scenario, d, np.ones_like(p), b, fq, k)
        dens = np.exp(lg - np.logaddexp(0.0, ls))
        dr = np.where(b > 0, 0.5 * b * (dens @ w) / LN2, 0.0)
    if not np.all(np.isfinite(dr)):
        raise NonFiniteIntegrand("rate derivative is not finite")
    return r, dr


def subband_rates(scenario, quad, p, b, d=None, with_dp=False):
    """Quadrature rates r (bit/s); optionally also dr/dp (bit/s per W)."""
    p, b, d = _prepare(scenario, p, b, d)
    return rates_at(scenario, quad, p, b, centers(scenario.spectrum, b), d, with_dp)


def rate_subband(scenario, quad, d_s, p_s, b_s, f_s):
    """Rate of one sub-band centred at ``f_s`` with width ``b_s``."""
    if p_s < 0 or b_s < 0:
        raise InvalidConfig("power and bandwidth must be non-negative")
    if p_s == 0 or b_s == 0:
        return 0.0
    r = rates_at(scenario, quad, np.array([p_s], float), np.array([b_s], float),
                 np.array([f_s], float), np.array([d_s], float))
    return float(r[0])


def _eta(model):
    if isinstance(model, ExponentialAbsorption):
        return model.eta1, model.eta2, model.eta3
    eta1, eta2, eta3 = model
    return float(eta1), float(eta2), float(eta3)


def rate_closed_form(scenario, d_s, p_s, b_s, b_prefix, eta):
    """Midpoint-rule rate with exponential absorption; 0 when p_s or b_s is 0.

    ``b_prefix`` is the total bandwidth of the lower sub-bands.
    """
    if p_s == 0 or b_s == 0:
        return 0.0
    eta1, eta2, eta3 = _eta(eta)
    f_s = scenario.spectrum.epsilon_f + b_prefix + 0.5 * b_s
    k = math.exp(eta1 + eta2 * f_s) + eta3
    lx = (math.log(p_s * scenario.budget.rho) + max(-d_s * k, EXPONENT_FLOOR)
          - math.log(b_s) - 2.0 * math.log(d_s) - 2.0 * math.log(f_s))
    return b_s * float(np.logaddexp(0.0, lx)) / LN2


def closed_form_rates(scenario, eta, p, b, d=None, with_grad=False):
    """Vectorised midpoint-rule rates.

    With ``with_grad`` also returns ``(dr_dp, dr_db_direct, dr_df)``, the
    partial derivatives of each r_s with respect to its own p_s, its own
    b_s at fixed centre, and its centre frequency f_s.
    """
    p, b, d = _prepare(scenario, p, b, d)
    eta1, eta2, eta3 = _eta(eta)
    f = centers(scenario.spectrum, b)
    ek = np.exp(eta1 + eta2 * f)
    k = ek + eta3
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log of the SNR per unit power
        lx1 = (math.log(scenario.budget.rho) + np.maximum(-d * k, EXPONENT_FLOOR)
               - np.log(b) - 2.0 * np.log(d) - 2.0 * np.log(f))
        lx = np.log(p) + lx1
        soft = np.logaddexp(0.0, lx)
        active = (b > 0) & (p > 0)
        r = np.where(active, b * soft / LN2, 0.0)
        if not with_grad:
            return r
        frac = np.exp(lx - soft) / LN2  # x / ((1 + x) ln2)
        dr_dp = np.where(b > 0, b * np.exp(lx1 - soft) / LN2, 0.0)
        dr_db = np.where(active, soft / LN2 - frac, 0.0)
        dr_df = np.where(active, b * frac * (-d * eta2 * ek - 2.0 / f), 0.0)
    return r, dr_dp, dr_db, dr_df


def closed_form_objective_grad(scenario, eta, p, b, d=None):
    """Objective sum(log r) of the closed form and its gradient in (p, b)."""
    r, dr_dp, dr_db, dr_df = closed_form_rates(scenario, eta, p, b, d, with_grad=True)
    rr = np.maximum(r, R_FLOOR)
    live = r > R_FLOOR
    inv = np.where(live, 1.0 / rr, 0.0)
    gp = inv * dr_dp
    # f_s depends on b_j through A[s, j]
    gf = inv * dr_df
    gb = inv * dr_db + gf @ mapping_matrix(scenario.n_s)
    return np.sum(np.log(rr), axis=-1), gp, gb


def evaluate(scenario, quad, p, b, d=None):
    """Rates, proportional-fair objective and aggregate rate for one allocation."""
    r = subband_rates(scenario, quad, p, b, d)
    return RateResult(r=r, objective_e=float(objective(r)), r_ag=float(np.sum(r)))

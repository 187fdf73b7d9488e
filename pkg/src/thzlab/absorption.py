"""Molecular absorption coefficient models k(f).

Three model families share one calling convention (``model(f)`` returns
k in 1/m for frequencies in Hz):

* :class:`TableAbsorption` interpolates tabulated data,
* :class:`ExponentialAbsorption` is ``exp(eta1 + eta2 * f) + eta3``,
* :class:`SyntheticAbsorption` adds a sinusoidal ripple to an exponential.

Evaluation outside a model's frequency domain raises
:class:`~thzlab.errors.FrequencyOutOfDomain`; nothing is extrapolated.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares

from .errors import FitDiverged, FrequencyOutOfDomain, InsufficientData, InvalidConfig

# Relative slack on domain edges, absorbs rounding in f_s +/- b_s/2.
_DOMAIN_RTOL = 1e-12


class Region(enum.Enum):
    NACSR = "nacsr"
    PACSR = "pacsr"
    UNTAGGED = "untagged"


class Interpolation(enum.Enum):
    LINEAR = "linear"
    CUBIC_MONOTONE = "cubic_monotone"


class Profile(enum.Enum):
    SMOOTH_EXPONENTIAL = "smooth_exponential"
    WIGGLY = "wiggly"


def _check_domain(f, lo, hi):
    f = np.asarray(f, dtype=float)
    slack = _DOMAIN_RTOL * max(abs(lo), abs(hi))
    if f.size and (np.min(f) < lo - slack or np.max(f) > hi + slack or not np.all(np.isfinite(f))):
        raise FrequencyOutOfDomain(
            f"frequency outside [{lo:.6e}, {hi:.6e}] Hz "
            f"(got min {np.min(f):.6e}, max {np.max(f):.6e})"
        )
    return np.clip(f, lo, hi)


@dataclass(frozen=True)
class AbsorptionTable:
    """Tabulated k(f): strictly increasing frequencies (Hz), k >= 0 (1/m)."""

    frequency: np.ndarray
    k: np.ndarray
    region: Region = Region.UNTAGGED

    def __post_init__(self):
        f = np.array(self.frequency, dtype=float).ravel()
        k = np.array(self.k, dtype=float).ravel()
        if f.size != k.size:
            raise InvalidConfig("frequency and k columns differ in length")
        if f.size < 2:
            raise InvalidConfig("absorption table needs at least 2 entries")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(k))):
            raise InvalidConfig("absorption table contains non-finite values")
        if np.any(np.diff(f) <= 0):
            raise InvalidConfig("table frequencies must be strictly increasing (no duplicates)")
        if np.any(k < 0):
            raise InvalidConfig("absorption coefficients must be >= 0")
        f.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "region", Region(self.region))

    def __len__(self):
        return self.frequency.size

    @property
    def domain(self):
        return float(self.frequency[0]), float(self.frequency[-1])

    def trend_slope(self):
        """Least-squares linear slope of k over frequency (1/m per Hz)."""
        return float(np.polyfit(self.frequency - self.frequency.mean(), self.k, 1)[0])

    @classmethod
    def from_csv(cls, path, region=Region.UNTAGGED):
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["frequency_hz", "k_per_m"]:
                raise InvalidConfig(f"{path}: expected header 'frequency_hz,k_per_m'")
            rows = [r for r in reader if r and any(c.strip() for c in r)]
        try:
            data = np.array([[float(a), float(b)] for a, b in rows])
        except ValueError as exc:
            raise InvalidConfig(f"{path}: malformed row ({exc})") from None
        if data.size == 0:
            raise InvalidConfig(f"{path}: no data rows")
        return cls(data[:, 0], data[:, 1], region)

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write("frequency_hz,k_per_m\n")
            for f, k in zip(self.frequency, self.k):
                fh.write(f"{float(f)!r},{float(k)!r}\n")


@dataclass(frozen=True)
class TableAbsorption:
    table: AbsorptionTable
    interpolation: Interpolation = Interpolation.CUBIC_MONOTONE

    @property
    def domain(self):
        return self.table.domain

    @cached_property
    def _pchip(self):
        return PchipInterpolator(self.table.frequency, self.table.k, extrapolate=False)

    @cached_property
    def _uniform_step(self):
        f = self.table.frequency
        h = (f[-1] - f[0]) / (f.size - 1)
        return h if np.allclose(np.diff(f), h, rtol=1e-9, atol=0.0) else None

    def __call__(self, f):
        f = _check_domain(f, *self.domain)
        if Interpolation(self.interpolation) is Interpolation.LINEAR:
            k = np.interp(f, self.table.frequency, self.table.k)
        elif self._uniform_step is None:
            k = self._pchip(f)
        else:
            # Uniform knots: locate the interval arithmetically instead of by search.
            x = self.table.frequency
            idx = np.clip(((f - x[0]) / self._uniform_step).astype(np.intp), 0, x.size - 2)
            dx = f - x[idx]
            c = self._pchip.c
            k = ((c[0, idx] * dx + c[1, idx]) * dx + c[2, idx]) * dx + c[3, idx]
        return np.maximum(k, 0.0)


@dataclass(frozen=True)
class ExponentialAbsorption:
    """k(f) = exp(eta1 + eta2 f) + eta3 on the closed domain [f_lo, f_hi]."""

    eta1: float
    eta2: float
    eta3: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise InvalidConfig("exponential model needs f_lo < f_hi")
        # exp() is monotone in f, so the minimum sits on an endpoint.
        ends = self._raw(np.array([self.f_lo, self.f_hi]))
        if not np.all(np.isfinite(ends)) or np.min(ends) < 0:
            raise InvalidConfig(
                f"exponential model eta=({self.eta1:g}, {self.eta2:g}, {self.eta3:g}) "
                f"is negative or non-finite on [{self.f_lo:g}, {self.f_hi:g}] Hz"
            )

    @property
    def eta(self):
        return np.array([self.eta1, self.eta2, self.eta3])

    @property
    def domain(self):
        return self.f_lo, self.f_hi

    def _raw(self, f):
        return np.exp(self.eta1 + self.eta2 * f) + self.eta3

    def __call__(self, f):
        return np.maximum(self._raw(_check_domain(f, *self.domain)), 0.0)

    def derivative(self, f):
        f = _check_domain(f, *self.domain)
        return self.eta2 * np.exp(self.eta1 + self.eta2 * f)


@dataclass(frozen=True)
class SyntheticAbsorption:
    """Exponential base plus ``ripple_amplitude * sin(2 pi f / ripple_period)``, clamped at 0."""

    base: ExponentialAbsorption
    ripple_amplitude: float
    ripple_period: float

    def __post_init__(self):
        if self.ripple_period <= 0:
            raise InvalidConfig("ripple_period must be positive")

    @property
    def domain(self):
        return self.base.domain

    def __call__(self, f):
        f = _check_domain(f, *self.domain)
        k = self.base._raw(f) + self.ripple_amplitude * np.sin(2 * np.pi * f / self.ripple_period)
        return np.maximum(k, 0.0)


def evaluate(model, f):
    """Absorption coefficient of ``model`` at ``f`` (scalar or array, Hz)."""
    k = model(f)
    return float(k) if np.ndim(k) == 0 else k


def tabulate(model, f_lo=None, f_hi=None, n=1024, region=Region.UNTAGGED):
    """Sample ``model`` on ``n`` equispaced frequencies into a table."""
    lo, hi = model.domain
    f = np.linspace(lo if f_lo is None else f_lo, hi if f_hi is None else f_hi, n)
    return AbsorptionTable(f, model(f), region)


# --- reference eta presets ---------------------------------------------------

#: Exponential parameters quoted for the two NACSRs in the reference setup.
#: Units are unverified: with f in Hz, ``sr_n2`` is negative everywhere on its
#: window, so these are informational only.
TABLE1_ETA = {
    "sr_n1": (10**1.83, -(10**-10.04), 10**-1.23),
    "sr_n2": (10**0.89, -(10**-10.8), -(10**-1.53)),
}
TABLE1_WINDOWS = {"sr_n1": (0.557e12, 0.671e12), "sr_n2": (0.752e12, 0.868e12)}


def table1_preset(name):
    """Return the raw ``(eta1, eta2, eta3)`` preset, with a units warning."""
    warnings.warn(
        f"reference eta preset {name!r} has ambiguous units; do not treat it as k(f) ground truth",
        stacklevel=2,
    )
    return TABLE1_ETA[name]


# --- fitting -----------------------------------------------------------------

_BETA_STARTS = (-12.0, -5.0, -2.0, -0.5, 0.5, 2.0, 5.0, 12.0)


def fit_exponential(table, f_lo, f_hi):
    """Least-squares fit of ``exp(eta1 + eta2 f) + eta3`` to table entries in [f_lo, f_hi].

    The fit runs in a normalised frequency ``t = (f - centre) / half_width``
    from eight starts over the slope sign and scale, each seeded by the
    linear least-squares solution for the amplitude and offset.

    Returns ``(model, max_rel_error)`` with the model's domain set to
    ``[f_lo, f_hi]``.
    """
    if not f_lo < f_hi:
        raise InvalidConfig("fit range needs f_lo < f_hi")
    t_lo, t_hi = table.domain
    slack = _DOMAIN_RTOL * max(abs(f_lo), abs(f_hi))
    if f_lo < t_lo - slack or f_hi > t_hi + slack:
        raise InsufficientData("table does not cover the fit range")
    mask = (table.frequency >= f_lo - slack) & (table.frequency <= f_hi + slack)
    f, k = table.frequency[mask], table.k[mask]
    if f.size < 4:
        raise InsufficientData(f"need >= 4 table entries in range, found {f.size}")

    centre, half = 0.5 * (f_lo + f_hi), 0.5 * (f_hi - f_lo)
    t = (f - centre) / half
    scale = float(np.mean(np.abs(k))) or 1.0

    def _done(a, beta, gamma):
        eta2 = beta / half
        eta1 = a - beta * centre / half
        model = ExponentialAbsorption(float(eta1), float(eta2), float(gamma), float(f_lo), float(f_hi))
        return model, _max_rel_error(model, f, k)

    if np.ptp(k) <= 1e-12 * scale:
        # Flat data: keep the eta2 = 0 branch with the exponential term negligible.
        c = float(np.mean(k))
        return _done(math.log(c * 1e-12) if c > 0 else -700.0, 0.0, c * (1 - 1e-12))

    def residual(x):
        return (np.exp(x[0] + x[1] * t) + x[2] - k) / scale

    def jac(x):
        e = np.exp(x[0] + x[1] * t) / scale
        return np.column_stack([e, e * t, np.full_like(t, 1.0 / scale)])

    sols = []
    for beta0 in _BETA_STARTS:
        basis = np.column_stack([np.exp(beta0 * t), np.ones_like(t)])
        (amp, gamma0), *_ = np.linalg.lstsq(basis, k, rcond=None)
        if not amp > 0:
            amp = 1e-3 * scale
            gamma0 = float(np.mean(k - amp * basis[:, 0]))
        x0 = np.array([math.log(amp), beta0, gamma0])
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                sol = least_squares(residual, x0, jac=jac, method="lm",
                                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
            except (ValueError, FloatingPointError):
                continue
        if np.all(np.isfinite(sol.x)) and np.isfinite(sol.cost):
            sols.append(sol)
    if not sols:
        raise FitDiverged("no multi-start converged")
    for sol in sorted(sols, key=lambda s: s.cost):
        a, beta, gamma = sol.x
        if math.exp(a - abs(beta)) + gamma >= 0:
            return _done(a, beta, gamma)
    # Every unconstrained optimum dips below zero somewhere in range: refit on
    # the boundary where the model touches zero at its minimum.
    return _done(*_boundary_fit(t, k, scale, sols))


def _boundary_fit(t, k, scale, sols):
    def model(x):
        a, beta = x
        return np.exp(a + beta * t) - np.exp(a - abs(beta)) * (1 - 1e-12)

    best = None
    for sol in sols:
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                r = least_squares(lambda x: (model(x) - k) / scale, sol.x[:2], method="lm",
                                  xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
            except (ValueError, FloatingPointError):
                continue
        if np.all(np.isfinite(r.x)) and np.isfinite(r.cost) and (best is None or r.cost < best.cost):
            best = r
    if best is None:
        raise FitDiverged("no nonnegative fit found")
    a, beta = best.x
    return a, beta, -math.exp(a - abs(beta)) * (1 - 1e-12)


def _max_rel_error(model, f, k):
    resid = np.abs(model._raw(f) - k)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(k > 0, resid / k, np.where(resid > 0, np.inf, 0.0))
    return float(np.max(rel))


# --- synthetic NACSR spectra -------------------------------------------------

# Trend shared by both profiles: k0 * exp(-(f - f_lo) / decay) + floor.
_K0 = 0.14  # 1/m at the window start
_DECAY = 17e9  # Hz
_FLOOR = 0.006  # 1/m


def synthesize_nacsr(span, profile=Profile.SMOOTH_EXPONENTIAL, seed=0, n_points=1024):
    """Synthetic NACSR absorption table on ``span = (f_lo, f_hi)``.

    ``SMOOTH_EXPONENTIAL`` is a decaying exponential with a ~1.5 % ripple so
    that an exponential fit is accurate to a few percent.  ``WIGGLY`` adds
    a slow 15 % ripple and a broad absorption shoulder to the same trend; it
    stays smooth but no exponential fits it.
    """
    f_lo, f_hi = map(float, span)
    if not f_lo < f_hi:
        raise InvalidConfig("span needs f_lo < f_hi")
    profile = Profile(profile)
    n_points = max(int(n_points), 512)
    rng = np.random.default_rng(seed)
    f = np.linspace(f_lo, f_hi, n_points)
    x = f - f_lo
    k0 = _K0 * rng.uniform(0.9, 1.1)
    decay = _DECAY * rng.uniform(0.9, 1.1)
    trend = k0 * np.exp(-x / decay) + _FLOOR
    phase = rng.uniform(0, 2 * np.pi)
    if profile is Profile.SMOOTH_EXPONENTIAL:
        k = trend * (1 + 0.015 * np.sin(2 * np.pi * x / 7e9 + phase))
    else:
        # a broad absorption shoulder inside the window plus a slow ripple:
        # smooth, but far from any single exponential
        period = rng.uniform(22e9, 30e9)
        k = trend * (1 + 0.15 * np.sin(2 * np.pi * x / period + phase))
        centre = f_lo + rng.uniform(0.35, 0.55) * (f_hi - f_lo)
        width = rng.uniform(3e9, 5e9)
        k = k + rng.uniform(6.0, 8.0) * _FLOOR * np.exp(-0.5 * ((f - centre) / width) ** 2)
    return AbsorptionTable(f, np.maximum(k, 1e-9), Region.NACSR)


# --- (de)serialisation -------------------------------------------------------


def model_to_dict(model):
    if isinstance(model, ExponentialAbsorption):
        return {"type": "exponential", "params": {
            "eta1": model.eta1, "eta2": model.eta2, "eta3": model.eta3,
            "f_lo": model.f_lo, "f_hi": model.f_hi}}
    if isinstance(model, SyntheticAbsorption):
        return {"type": "synthetic", "params": {
            "base": model_to_dict(model.base)["params"],
            "ripple_amplitude": model.ripple_amplitude, "ripple_period": model.ripple_period}}
    if isinstance(model, TableAbsorption):
        return {"type": "table", "params": {
            "frequency_hz": model.table.frequency.tolist(), "k_per_m": model.table.k.tolist(),
            "region": model.table.region.value,
            "interpolation": Interpolation(model.interpolation).value}}
    raise TypeError(f"unknown absorption model {type(model).__name__}")


def model_from_dict(doc, base_dir=None):
    kind = doc.get("type")
    params = doc.get("params", {})
    if kind == "exponential":
        return ExponentialAbsorption(**params)
    if kind == "synthetic":
        return SyntheticAbsorption(ExponentialAbsorption(**params["base"]),
                                   params["ripple_amplitude"], params["ripple_period"])
    if kind == "table":
        interp = Interpolation(params.get("interpolation", "cubic_monotone"))
        region = Region(params.get("region", "untagged"))
        if "csv_path" in doc or "csv_path" in params:
            path = Path(doc.get("csv_path") or params["csv_path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return TableAbsorption(AbsorptionTable.from_csv(path, region), interp)
        return TableAbsorption(AbsorptionTable(params["frequency_hz"], params["k_per_m"], region), interp)
    raise InvalidConfig(f"unknown absorption type {kind!r}")

"""Indoor deployment instances: geometry, link budget, distances."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import absorption as _abs
from .errors import DimensionMismatch, InvalidConfig
from .spectrum import SpectrumConfig

SPEED_OF_LIGHT = 299_792_458.0
TIE_BREAK_M = 1e-9


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class RoomGeometry:
    width: float
    depth: float
    ap_user_height_delta: float

    def __post_init__(self):
        if min(self.width, self.depth, self.ap_user_height_delta) <= 0:
            raise InvalidConfig("room dimensions must be positive")

    @property
    def d_min(self):
        return self.ap_user_height_delta

    @property
    def d_max(self):
        """Distance from the ceiling-centre AP to a floor corner."""
        return math.sqrt((self.width / 2) ** 2 + (self.depth / 2) ** 2 + self.ap_user_height_delta**2)


@dataclass(frozen=True)
class LinkBudget:
    """Antenna gains and noise density in linear SI units; powers in W."""

    g_a: float
    g_u: float
    n0: float
    p_tot: float
    p_max: float
    rho: float = field(default=None)

    def __post_init__(self):
        if min(self.g_a, self.g_u, self.n0, self.p_tot, self.p_max) <= 0:
            raise InvalidConfig("link budget entries must be positive")
        rho = self.g_a * self.g_u * (SPEED_OF_LIGHT / (4 * math.pi)) ** 2 / self.n0
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        elif abs(self.rho - rho) > 1e-12 * rho:
            raise InvalidConfig("stored rho disagrees with g_a * g_u * (c / 4 pi)^2 / n0")

    @classmethod
    def from_db(cls, g_a_dbi, g_u_dbi, n0_dbm_per_hz, p_tot_dbm, p_max_w):
        return cls(db_to_linear(g_a_dbi), db_to_linear(g_u_dbi), dbm_to_watt(n0_dbm_per_hz),
                   dbm_to_watt(p_tot_dbm), p_max_w)


def table1_defaults(n_users=15, b_tot=50e9, b_max=5e9, epsilon_f=752e9):
    """Reference room, link budget and spectrum (all SI).

    The spectrum starts at 752 GHz, the lower edge of the reference NACSR;
    p_max is 5/4 of the equal power share.
    """
    geometry = RoomGeometry(25.0, 25.0, 1.7)
    p_tot = dbm_to_watt(-5.0)
    budget = LinkBudget.from_db(30.0, 20.0, -174.0, -5.0, 1.25 * p_tot / n_users)
    spectrum = SpectrumConfig(epsilon_f=epsilon_f, b_tot=b_tot, b_max=b_max, n_s=n_users)
    return geometry, budget, spectrum


def _strictly_increasing(d):
    d = np.sort(np.asarray(d, dtype=float), axis=-1)
    for i in range(1, d.shape[-1]):
        d[..., i] = np.maximum(d[..., i], d[..., i - 1] + TIE_BREAK_M)
    return d


def sample_distances(geometry, n_users, seed, n_samples=None):
    """Uniform user positions on the floor, distances to the ceiling-centre AP, sorted ascending.

    With ``n_samples`` the result has shape ``(n_samples, n_users)``.
    """
    if n_users < 1:
        raise InvalidConfig("n_users must be >= 1")
    rng = np.random.default_rng(seed)
    shape = (n_users,) if n_samples is None else (n_samples, n_users)
    x = rng.uniform(-geometry.width / 2, geometry.width / 2, size=shape)
    y = rng.uniform(-geometry.depth / 2, geometry.depth / 2, size=shape)
    return _strictly_increasing(np.sqrt(x**2 + y**2 + geometry.ap_user_height_delta**2))


def sample_scenario(geometry, n_users, seed):
    return sample_distances(geometry, n_users, seed)


@dataclass(frozen=True)
class Scenario:
    d: np.ndarray
    geometry: RoomGeometry
    budget: LinkBudget
    spectrum: SpectrumConfig
    absorption: object

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.shape != (self.spectrum.n_s,):
            raise DimensionMismatch(f"need {self.spectrum.n_s} distances (one user per sub-band), got {d.shape}")
        if np.any(d <= 0):
            raise InvalidConfig("distances must be positive")
        d = _strictly_increasing(d)
        d.flags.writeable = False
        object.__setattr__(self, "d", d)
        if self.budget.p_tot > self.spectrum.n_s * self.budget.p_max * (1 + 1e-12):
            raise InvalidConfig("p_tot exceeds n_s * p_max")

    @property
    def n_s(self):
        return self.spectrum.n_s

    def with_distances(self, d):
        return Scenario(d, self.geometry, self.budget, self.spectrum, self.absorption)

    def with_absorption(self, model):
        return Scenario(self.d, self.geometry, self.budget, self.spectrum, model)

    # JSON fixture -------------------------------------------------------
    def to_dict(self, csv_path=None):
        absorption = ({"type": "table", "csv_path": str(csv_path)} if csv_path is not None
                      else _abs.model_to_dict(self.absorption))
        return {
            "distances_m": self.d.tolist(),
            "epsilon_f_hz": self.spectrum.epsilon_f,
            "b_tot_hz": self.spectrum.b_tot,
            "b_max_hz": self.spectrum.b_max,
            "p_tot_w": self.budget.p_tot,
            "p_max_w": self.budget.p_max,
            "rho": self.budget.rho,
            "absorption": absorption,
            "geometry": {"width_m": self.geometry.width, "depth_m": self.geometry.depth,
                         "ap_user_height_delta_m": self.geometry.ap_user_height_delta},
            "link": {"g_a": self.budget.g_a, "g_u": self.budget.g_u, "n0_w_per_hz": self.budget.n0},
        }

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        try:
            d = doc["distances_m"]
            geo = doc.get("geometry", {})
            geometry = RoomGeometry(geo.get("width_m", 25.0), geo.get("depth_m", 25.0),
                                    geo.get("ap_user_height_delta_m", 1.7))
            link = doc.get("link")
            if link is not None:
                budget = LinkBudget(link["g_a"], link["g_u"], link["n0_w_per_hz"],
                                    doc["p_tot_w"], doc["p_max_w"], doc.get("rho"))
            else:
                # Only rho is given; back out n0 with unit gains.
                rho = doc["rho"]
                budget = LinkBudget(1.0, 1.0, (SPEED_OF_LIGHT / (4 * math.pi)) ** 2 / rho,
                                    doc["p_tot_w"], doc["p_max_w"])
            spectrum = SpectrumConfig(doc["epsilon_f_hz"], doc["b_tot_hz"], doc["b_max_hz"], len(d))
            model = _abs.model_from_dict(doc["absorption"], base_dir)
        except KeyError as exc:
            raise InvalidConfig(f"scenario document missing key {exc}") from None
        return cls(d, geometry, budget, spectrum, model)

    def save(self, path, csv_path=None):
        Path(path).write_text(json.dumps(self.to_dict(csv_path), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)

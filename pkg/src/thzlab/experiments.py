"""End-to-end experiment runner.

Three experiments are available:

``fig4``  convergence on a smooth, nearly exponential absorption window,
          compared with the convex special-case solution on the same batch;
``fig5``  convergence on a non-exponential window, with the convex solver fed
          the (poor) exponential fit of that window;
``fig6``  a sweep over the sub-band bandwidth cap b_max comparing equal
          sub-band bandwidth, the convex special case and the learned solver.

Every run writes CSV files (floats via ``repr``, so identical seeds give
byte-identical files), a ``summary.json`` and a ``manifest.json`` listing
every written file with its SHA-256.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import absorption as _abs
from . import baseline as _bl
from . import neural as _nn
from . import rate as _rate
from . import trainer as _tr
from .errors import InvalidConfig
from .scenario import LinkBudget, RoomGeometry, Scenario, SpectrumConfig, dbm_to_watt, sample_distances

BMAX_SWEEP_HZ = (3.5e9, 4.0e9, 4.5e9, 5.0e9)


class Experiment(enum.Enum):
    CONVERGENCE_EXPONENTIAL = "fig4"
    CONVERGENCE_NON_EXPONENTIAL = "fig5"
    BMAX_SWEEP = "fig6"


class Scale(enum.Enum):
    DESK = "desk"
    PAPER = "paper"


#: Reference values; any of them can be overridden with ``--set key=value``.
DEFAULTS = {
    "n_users": 15,
    "room_width_m": 25.0,
    "room_depth_m": 25.0,
    "height_delta_m": 1.7,
    "g_a_dbi": 30.0,
    "g_u_dbi": 20.0,
    "n0_dbm_per_hz": -174.0,
    "p_tot_dbm": -5.0,
    "p_max_factor": 1.25,
    "epsilon_f_hz": 752e9,
    "b_tot_hz": 50e9,
    "b_max_hz": 5e9,
    "delta_theta": 0.05,
    "delta_lambda": 0.025,
    "n_iterations": 500,
    "n_t": None,  # by scale
    "epsilon_fd": 1e-4,
    "lambda1_init": 0.1,
    "lambda2_init": 0.1,
    "init_scheme": "paper_gaussian",
    "quad_nodes": 33,
    "profile": None,  # by experiment
    "workers": 1,
}
N_T_BY_SCALE = {Scale.DESK: 100, Scale.PAPER: 300}
DEFAULT_PROFILE = {
    Experiment.CONVERGENCE_EXPONENTIAL: _abs.Profile.SMOOTH_EXPONENTIAL,
    Experiment.CONVERGENCE_NON_EXPONENTIAL: _abs.Profile.WIGGLY,
    Experiment.BMAX_SWEEP: _abs.Profile.SMOOTH_EXPONENTIAL,
}


def parse_override(text):
    """``"key=value"`` to ``(key, value)``; the value is read as JSON when possible."""
    if "=" not in text:
        raise InvalidConfig(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise InvalidConfig(f"unknown override {key!r}; known: {', '.join(sorted(DEFAULTS))}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    seed: int = 7
    scale: Scale = Scale.DESK
    overrides: dict = field(default_factory=dict)
    output_dir: Path = Path("out")

    def __post_init__(self):
        try:
            object.__setattr__(self, "experiment", Experiment(self.experiment))
            object.__setattr__(self, "scale", Scale(self.scale))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        unknown = set(self.overrides) - set(DEFAULTS)
        if unknown:
            raise InvalidConfig(f"unknown overrides {sorted(unknown)}")
        if int(self.seed) < 0:
            raise InvalidConfig("seed must be non-negative")
        v = self.values()
        if self.scale is Scale.DESK and (v["n_t"] > 100 or v["n_iterations"] > 500):
            raise InvalidConfig("desk scale allows n_t <= 100 and at most 500 iterations")

    def values(self):
        v = dict(DEFAULTS)
        v["n_t"] = N_T_BY_SCALE[self.scale]
        v["profile"] = DEFAULT_PROFILE[self.experiment].value
        v.update(self.overrides)
        return v


# --- set-up ------------------------------------------------------------------


@dataclass
class Setup:
    scenario: Scenario
    batch: np.ndarray
    table: _abs.AbsorptionTable
    fit: _abs.ExponentialAbsorption
    fit_error: float
    hyper: _tr.Hyperparams
    quad: _rate.QuadratureSpec
    values: dict


def build_setup(values, seed, b_max=None, table_b_max=None):
    """Scenario template, distance batch and absorption for one run.

    The absorption table spans ``[epsilon_f, epsilon_f + n_s * table_b_max]``
    so that every output the network can emit stays inside its domain.  The
    exponential fit covers ``[epsilon_f, epsilon_f + b_tot]``.
    """
    try:
        n = int(values["n_users"])
        b_max = float(values["b_max_hz"] if b_max is None else b_max)
        table_b_max = b_max if table_b_max is None else float(table_b_max)
        geometry = RoomGeometry(float(values["room_width_m"]), float(values["room_depth_m"]),
                                float(values["height_delta_m"]))
        p_tot = dbm_to_watt(float(values["p_tot_dbm"]))
        budget = LinkBudget.from_db(float(values["g_a_dbi"]), float(values["g_u_dbi"]),
                                    float(values["n0_dbm_per_hz"]), float(values["p_tot_dbm"]),
                                    float(values["p_max_factor"]) * p_tot / n)
        spectrum = SpectrumConfig(float(values["epsilon_f_hz"]), float(values["b_tot_hz"]), b_max, n)
        hyper = _tr.Hyperparams(float(values["delta_theta"]), float(values["delta_lambda"]),
                                int(values["n_iterations"]), int(values["n_t"]), float(values["epsilon_fd"]),
                                (float(values["lambda1_init"]), float(values["lambda2_init"])))
        quad = _rate.QuadratureSpec(nodes_per_subband=int(values["quad_nodes"]))
        profile = _abs.Profile(values["profile"])
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    f_lo = spectrum.epsilon_f
    table = _abs.synthesize_nacsr((f_lo, f_lo + n * table_b_max), profile, seed)
    fit, err = _abs.fit_exponential(table, f_lo, f_lo + spectrum.b_tot)
    batch = sample_distances(geometry, n, seed, n_samples=hyper.n_t)
    scenario = Scenario(batch[0], geometry, budget, spectrum, _abs.TableAbsorption(table))
    return Setup(scenario, batch, table, fit, err, hyper, quad, values)


def make_network(setup, seed):
    sc = setup.scenario
    arch = _nn.paper_architecture(sc.n_s, sc.budget.p_max, sc.spectrum.b_max)
    return _nn.init(arch, sc.n_s, seed, setup.values["init_scheme"], sc.geometry.d_max)


def _mean_r_ag(setup, p, b):
    return float(_rate.subband_rates(setup.scenario, setup.quad, p, b, setup.batch).sum(axis=-1).mean())


def convex_batch(setup):
    p, b, _, _, conv = _bl.solve_special_case_batch(setup.scenario, setup.fit, setup.batch)
    return _mean_r_ag(setup, p, b), bool(conv.all())


def esb_batch(setup):
    p, b, _, conv = _bl.solve_esb_batch(setup.scenario, setup.quad, setup.batch)
    return _mean_r_ag(setup, p, b), bool(conv.all())


def train_setup(setup, seed):
    state, history = _tr.train(setup.batch, setup.scenario, make_network(setup, seed), setup.hyper, setup.quad)
    return state, history


# --- writers -----------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _residual_stats(history, budget, spectrum, tail=50):
    last = history[-tail:]
    return {
        "mean_abs_power_residual_rel": float(np.mean([abs(r.power_residual) for r in last]) / budget.p_tot),
        "mean_abs_bandwidth_residual_rel":
            float(np.mean([abs(r.bandwidth_residual) for r in last]) / spectrum.b_tot),
    }


def overshoot_iterations(history, window=50):
    """Iterations among the first ``window`` whose mean R_AG exceeds the final one
    while at least one constraint residual is positive."""
    final = history[-1].mean_r_ag
    return [r.iteration for r in history[:window]
            if r.mean_r_ag > final and (r.power_residual > 0 or r.bandwidth_residual > 0)]


# --- experiments -------------------------------------------------------------


def _convergence(config, out, files):
    v = config.values()
    setup = build_setup(v, config.seed)
    sc = setup.scenario
    state, history = train_setup(setup, config.seed)
    r_convex, conv_ok = convex_batch(setup)
    r_esb, esb_ok = esb_batch(setup)

    _tr.write_log(history, out / "training_log.csv")
    files.append("training_log.csv")
    setup.table.to_csv(out / "absorption.csv")
    files.append("absorption.csv")
    _write_csv(out / "baselines.csv", ("solver", "mean_r_ag_bps", "converged"),
               [("convex_special_case", r_convex, int(conv_ok)), ("esb", r_esb, int(esb_ok))])
    files.append("baselines.csv")
    _tr.save_checkpoint(state, out / "checkpoint.json")
    files.append("checkpoint.json")

    final = history[-1]
    return {
        "experiment": config.experiment.value,
        "seed": config.seed,
        "scale": config.scale.value,
        "profile": v["profile"],
        "fit_max_rel_error": setup.fit_error,
        "fit_eta": list(setup.fit.eta),
        "final_learned_r_ag_bps": final.mean_r_ag,
        "convex_r_ag_bps": r_convex,
        "esb_r_ag_bps": r_esb,
        "learned_over_convex": final.mean_r_ag / r_convex,
        "final_power_residual_w": final.power_residual,
        "final_bandwidth_residual_hz": final.bandwidth_residual,
        "overshoot_iterations": overshoot_iterations(history),
        "trainer_metadata": state.metadata,
        **_residual_stats(history, sc.budget, sc.spectrum),
    }


def _sweep_point(args):
    values, seed, b_max, table_b_max = args
    setup = build_setup(values, seed, b_max=b_max, table_b_max=table_b_max)
    state, history = train_setup(setup, seed)
    r_convex, _ = convex_batch(setup)
    r_esb, _ = esb_batch(setup)
    return b_max, r_esb, r_convex, history[-1].mean_r_ag, history, state.metadata


def _bmax_sweep(config, out, files):
    v = config.values()
    table_b_max = max(BMAX_SWEEP_HZ)
    jobs = [(v, config.seed, b, table_b_max) for b in BMAX_SWEEP_HZ]
    workers = int(v["workers"])
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows, meta = [], {}
    for b_max, r_esb, r_convex, r_learned, history, md in results:
        rows.append(ComparisonRow(b_max, r_esb, r_convex, r_learned))
        name = f"training_log_bmax_{b_max / 1e9:g}ghz.csv"
        _tr.write_log(history, out / name)
        files.append(name)
        meta[f"{b_max:g}"] = md
    _write_csv(out / "comparison.csv", ComparisonRow.HEADER, [r.as_tuple() for r in rows])
    files.append("comparison.csv")
    return {
        "experiment": config.experiment.value,
        "seed": config.seed,
        "scale": config.scale.value,
        "profile": v["profile"],
        "rows": [dict(zip(ComparisonRow.HEADER, r.as_tuple())) for r in rows],
        "learned_beats_esb_everywhere": all(r.r_ag_learned > r.r_ag_esb for r in rows),
        "trainer_metadata": meta,
    }


@dataclass(frozen=True)
class ComparisonRow:
    b_max: float
    r_ag_esb: float
    r_ag_convex: float
    r_ag_learned: float

    HEADER = ("b_max_hz", "r_ag_esb_bps", "r_ag_convex_bps", "r_ag_learned_bps")

    def __post_init__(self):
        vals = (self.b_max, self.r_ag_esb, self.r_ag_convex, self.r_ag_learned)
        if not all(math.isfinite(x) and x >= 0 for x in vals):
            raise InvalidConfig("comparison entries must be finite and non-negative")

    def as_tuple(self):
        return (float(self.b_max), float(self.r_ag_esb), float(self.r_ag_convex), float(self.r_ag_learned))


def run(config):
    """Run one experiment; returns the manifest dict (also written to ``manifest.json``)."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    files, status, error = [], "complete", None
    t0 = time.perf_counter()
    try:
        if config.experiment is Experiment.BMAX_SWEEP:
            summary = _bmax_sweep(config, out, files)
        else:
            summary = _convergence(config, out, files)
        summary["overrides"] = dict(sorted(config.overrides.items()))
        _write_json(out / "summary.json", summary)
        files.append("summary.json")
    except BaseException as exc:
        status, error = "partial", f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest = {
            "experiment": config.experiment.value,
            "seed": config.seed,
            "scale": config.scale.value,
            "status": status,
            "error": error,
            "elapsed_s": round(time.perf_counter() - t0, 3),
            "files": [{"path": name, "sha256": _sha256(out / name)} for name in files],
        }
        _write_json(out / "manifest.json", manifest)
    return manifest

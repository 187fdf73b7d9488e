"""Primal-dual unsupervised training of the allocation network.

The network maps a sorted distance vector d to (p, b).  Training minimises
the batch mean J of the Lagrangian

    L(d) = -E(d, p, b) + lambda1 (sum p - p_tot) + lambda2 (sum b - b_tot)

by plain gradient descent on the weights, with the objective gradient of E
taken by forward finite differences and pushed through the network by
backpropagation.  After every weight step the multipliers take one projected
ascent step on the mean constraint residuals.

Multipliers are stored in SI units (1/W and 1/Hz).  The ascent step and the
initial value act on the box-normalised multipliers ``mu_i = lambda_i *
theta_i`` with ``theta = (p_max, b_max)``, which keeps the two updates on a
comparable scale.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural as _nn
from . import rate as _rate
from .errors import DimensionMismatch, InvalidConfig, NonFiniteIntegrand, NonFiniteLoss
from .scenario import sample_distances

LOG_HEADER = ("iteration", "loss_j", "mean_r_ag_bps", "power_residual_w",
              "bandwidth_residual_hz", "lambda1", "lambda2")

#: Coordinates below this fraction of their box get an absolute FD step.
DEGENERATE_FLOOR = 1e-12
#: Absolute FD step, as a fraction of the box, used for degenerate coordinates.
ABSOLUTE_STEP = 1e-6
#: Output pre-activations beyond this magnitude count as saturated.
SATURATION_Z = 30.0


class DegenerateBase(UserWarning):
    """A finite-difference base coordinate was (numerically) zero."""


@dataclass(frozen=True)
class Hyperparams:
    """Training hyper-parameters.

    ``lambda_init`` is given in box-normalised units (see module docstring).
    """

    delta_theta: float = 0.05
    delta_lambda: float = 0.025
    n_iterations: int = 500
    n_t: int = 100
    epsilon_fd: float = 1e-4
    lambda_init: tuple = (0.1, 0.1)
    resample: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lambda_init", tuple(float(v) for v in self.lambda_init))
        if len(self.lambda_init) != 2:
            raise InvalidConfig("lambda_init needs two entries")
        for name in ("delta_lambda", "epsilon_fd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidConfig(f"{name} must be positive, got {v}")
        # a zero weight step is allowed: it freezes the network and leaves only the dual update
        if not (math.isfinite(self.delta_theta) and self.delta_theta >= 0):
            raise InvalidConfig(f"delta_theta must be non-negative, got {self.delta_theta}")
        if self.epsilon_fd > 1e-2:
            raise InvalidConfig("epsilon_fd must be at most 1e-2")
        if int(self.n_iterations) < 1 or int(self.n_t) < 1:
            raise InvalidConfig("n_iterations and n_t must be positive")
        if any(not (math.isfinite(v) and v > 0) for v in self.lambda_init):
            raise InvalidConfig("lambda_init must be positive")

    def to_dict(self):
        d = asdict(self)
        d["lambda_init"] = list(self.lambda_init)
        return d


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss_j: float
    mean_r_ag: float
    power_residual: float
    bandwidth_residual: float
    lam: tuple

    def row(self):
        return (self.iteration, self.loss_j, self.mean_r_ag, self.power_residual,
                self.bandwidth_residual, self.lam[0], self.lam[1])


@dataclass
class TrainerState:
    net: _nn.Network
    lam: np.ndarray
    iteration: int
    history: list
    scenario: object
    quad: _rate.QuadratureSpec
    hyper: Hyperparams
    metadata: dict = field(default_factory=dict)

    @property
    def box(self):
        return np.array([self.scenario.budget.p_max, self.scenario.spectrum.b_max])


def lagrangian_hat(scenario, quad, d, p, b, lam):
    """Lagrangian ``-E + lambda1 (sum p - p_tot) + lambda2 (sum b - b_tot)``.

    Broadcasts over leading batch axes.
    """
    r = _rate.subband_rates(scenario, quad, p, b, d)
    return _lagrangian(scenario, _rate.objective(r), p, b, lam)


def _lagrangian(scenario, e, p, b, lam):
    res_p = np.sum(p, axis=-1) - scenario.budget.p_tot
    res_b = np.sum(b, axis=-1) - scenario.spectrum.b_tot
    return -e + lam[0] * res_p + lam[1] * res_b


@dataclass
class _FDResult:
    gp: np.ndarray
    gb: np.ndarray
    objective: np.ndarray
    r_ag: np.ndarray
    degenerate: int


def _steps(x, box, eps):
    floor = DEGENERATE_FLOOR * box
    degenerate = x < floor
    return np.where(degenerate, ABSOLUTE_STEP * box, eps * x), int(degenerate.sum())


def _fd(scenario, quad, d, p, b, eps):
    """Forward differences of E for a batch, one per coordinate.

    A power perturbation only changes its own sub-band rate, so all power
    differences come from a single extra rate evaluation.  A bandwidth
    perturbation shifts every later centre frequency and is evaluated in full.
    """
    budget, spec = scenario.budget, scenario.spectrum
    d = np.asarray(d, dtype=float)
    r0 = _rate.subband_rates(scenario, quad, p, b, d)
    log0 = np.log(np.maximum(r0, _rate.R_FLOOR))
    e0 = log0.sum(axis=-1)

    hp, n_deg_p = _steps(p, budget.p_max, eps)
    r_p = _rate.rates_at(scenario, quad, p + hp, b, _rate.centers(spec, b), d)
    gp = (np.log(np.maximum(r_p, _rate.R_FLOOR)) - log0) / hp

    hb, n_deg_b = _steps(b, spec.b_max, eps)
    n = b.shape[-1]
    bb = np.repeat(b[..., None, :], n, axis=-2)
    idx = np.arange(n)
    bb[..., idx, idx] += hb
    pp = np.repeat(p[..., None, :], n, axis=-2)
    dd = np.repeat(d[..., None, :], n, axis=-2) if d.ndim == b.ndim else d
    e_b = _rate.objective(_rate.subband_rates(scenario, quad, pp, bb, dd))
    gb = (e_b - e0[..., None]) / hb
    return _FDResult(gp, gb, e0, r0.sum(axis=-1), n_deg_p + n_deg_b)


def fd_objective_gradients(scenario, quad, d, p, b, epsilon_fd=1e-4):
    """Forward-difference gradient ``(gp, gb)`` of E at (p, b).

    Coordinate i is perturbed by ``epsilon_fd * x_i``.  Coordinates below
    ``1e-12`` of their box use an absolute step ``1e-6 * box`` instead, and
    a ``DegenerateBase`` warning is issued.
    """
    p = np.asarray(p, dtype=float)
    b = np.asarray(b, dtype=float)
    if p.shape != b.shape or p.shape[-1:] != (scenario.n_s,):
        raise DimensionMismatch("p and b must share a trailing axis of length n_s")
    res = _fd(scenario, quad, scenario.d if d is None else d, p, b, epsilon_fd)
    if res.degenerate:
        warnings.warn(f"{res.degenerate} coordinate(s) at zero; absolute step used", DegenerateBase,
                      stacklevel=2)
    return res.gp, res.gb


# --- training ----------------------------------------------------------------


def _saturated(net, batch):
    _, tape = _nn.forward(net, batch)
    z = tape[-1][1]
    return (not np.all(np.isfinite(z))) or float(np.mean(np.abs(z) > SATURATION_Z)) > 0.5


def new_state(scenario, net, hyper, quad=None):
    box = np.array([scenario.budget.p_max, scenario.spectrum.b_max])
    return TrainerState(net, np.asarray(hyper.lambda_init) / box, 0, [], scenario,
                        quad or _rate.QuadratureSpec(), hyper, {})


def train(batch, scenario, net, hyper=Hyperparams(), quad=None, init_fallback=True, state=None,
          callback=None):
    """Run ``hyper.n_iterations`` primal-dual iterations on a batch of distance vectors.

    ``batch`` has shape (n_t, n_s) with every row sorted ascending.  When
    ``init_fallback`` is set and more than half of the output units are
    saturated at the start, the network is re-drawn with the scaled
    initialisation (same seed) and ``metadata["init_fallback"]`` records it.
    Passing ``state`` continues an earlier run.  Returns ``(state, history)``.
    """
    batch = np.asarray(batch, dtype=float)
    n = scenario.n_s
    if batch.ndim != 2 or batch.shape[1] != n:
        raise DimensionMismatch(f"batch must have shape (n_t, {n}), got {batch.shape}")
    if batch.shape[0] != hyper.n_t:
        raise DimensionMismatch(f"batch has {batch.shape[0]} rows but n_t = {hyper.n_t}")
    if np.any(np.diff(batch, axis=1) < 0):
        raise InvalidConfig("every distance vector must be sorted ascending")
    if net.input_dim != n or net.output_dim != 2 * n:
        raise DimensionMismatch("network shape does not match the scenario")

    if state is None:
        state = new_state(scenario, net, hyper, quad)
        if init_fallback and _saturated(net, batch):
            arch = [l.spec for l in net.layers]
            state.net = _nn.init(arch, n, net.seed, _nn.InitScheme.SCALED, net.input_scale)
            state.metadata["init_fallback"] = {"from": net.scheme.value, "to": "scaled"}
    quad, box = state.quad, state.box
    budget, spec = scenario.budget, scenario.spectrum
    rng = np.random.default_rng(state.net.seed)
    state.metadata.setdefault("degenerate_fd_coordinates", 0)

    for _ in range(int(hyper.n_iterations)):
        if hyper.resample and state.iteration > 0:
            batch = sample_distances(scenario.geometry, n, int(rng.integers(2**63)), hyper.n_t)
        y, tape = _nn.forward(state.net, batch)
        p, b = y[:, :n], y[:, n:]
        lam = state.lam.copy()
        try:
            fd = _fd(scenario, quad, batch, p, b, hyper.epsilon_fd)
        except NonFiniteIntegrand as exc:
            raise NonFiniteLoss(f"iteration {state.iteration + 1}: {exc}",
                                {"iteration": state.iteration + 1, "lambda": lam.tolist()}) from exc
        state.metadata["degenerate_fd_coordinates"] += fd.degenerate
        res_p = p.sum(axis=1) - budget.p_tot
        res_b = b.sum(axis=1) - spec.b_tot
        loss = float(np.mean(-fd.objective + lam[0] * res_p + lam[1] * res_b))
        record = IterationRecord(state.iteration + 1, loss, float(fd.r_ag.mean()),
                                 float(res_p.mean()), float(res_b.mean()), (float(lam[0]), float(lam[1])))
        if not (np.isfinite(loss) and np.all(np.isfinite(fd.gp)) and np.all(np.isfinite(fd.gb))):
            raise NonFiniteLoss(f"non-finite loss at iteration {record.iteration}", record)

        seed = np.concatenate([-fd.gp + lam[0], -fd.gb + lam[1]], axis=1) / batch.shape[0]
        grads = _nn.backward(state.net, tape, seed)
        state.net = state.net.step(grads, hyper.delta_theta)

        mu = lam * box + hyper.delta_lambda * np.array([res_p.mean(), res_b.mean()]) / box
        state.lam = np.maximum(mu, 0.0) / box
        state.iteration += 1
        state.history.append(record)
        if callback is not None:
            callback(record)
    return state, list(state.history)


def infer(state, d):
    """Single forward pass for one distance vector; returns ``(p, b, RateResult)``."""
    d = np.asarray(d, dtype=float)
    n = state.scenario.n_s
    if d.shape != (n,):
        raise DimensionMismatch(f"d must have shape ({n},), got {d.shape}")
    y, _ = _nn.forward(state.net, d)
    p, b = y[:n], y[n:]
    return p, b, _rate.evaluate(state.scenario, state.quad, p, b, d)


def infer_batch(state, batch):
    """Forward pass for a batch; returns ``(p, b, r)`` with per-sub-band rates."""
    n = state.scenario.n_s
    y, _ = _nn.forward(state.net, np.asarray(batch, dtype=float))
    p, b = y[..., :n], y[..., n:]
    return p, b, _rate.subband_rates(state.scenario, state.quad, p, b, batch)


# --- persistence ---------------------------------------------------------------


def write_log(history, path):
    """Training log CSV; floats are written with ``repr`` so reruns are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for rec in history:
            w.writerow([rec.iteration] + [repr(float(v)) for v in rec.row()[1:]])


def read_log(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != LOG_HEADER:
        raise InvalidConfig(f"unexpected log header {rows[0]}")
    return [IterationRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                            (float(r[5]), float(r[6]))) for r in rows[1:]]


def save_checkpoint(state, path):
    extra = {
        "lambda": state.lam.tolist(),
        "iteration": state.iteration,
        "hyperparams": state.hyper.to_dict(),
        "metadata": state.metadata,
    }
    _nn.save(state.net, path, extra=extra)


def load_checkpoint(path, scenario, quad=None):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    net = _nn.from_dict(doc)
    hyper = Hyperparams(**doc.get("hyperparams", {}))
    lam = np.asarray(doc.get("lambda", np.asarray(hyper.lambda_init)
                             / [scenario.budget.p_max, scenario.spectrum.b_max]), dtype=float)
    return TrainerState(net, lam, int(doc.get("iteration", 0)), [], scenario,
                        quad or _rate.QuadratureSpec(), hyper, dict(doc.get("metadata", {})))

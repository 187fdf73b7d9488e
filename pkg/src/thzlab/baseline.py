"""Reference solvers: convex special case, equal sub-band bandwidth, grid oracle, KKT checks.

Both continuous solvers use a spectral projected gradient method (Barzilai-
Borwein steps, Armijo backtracking) with exact Euclidean projections onto
the coupled constraint sets ``{0 <= x <= u, sum(x) <= c}`` and
``{0 <= x <= u, sum(x) = c}``.  They are vectorised over a batch of
distance vectors; every batch row is an independent problem.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import rate as _rate
from .absorption import ExponentialAbsorption
from .errors import DimensionMismatch, Infeasible, TooLarge

#: Transformation parameters (xi1 [Hz], xi2 [Hz], xi3 [-]) of the reference setup.
TABLE1_XI = (10**9.7, 10**10.7, 10**-3)


class SolverTag(enum.Enum):
    CONVEX_SPECIAL_CASE = "convex_special_case"
    ESB = "esb"
    GRID_ORACLE = "grid_oracle"
    LEARNED = "learned"


# --- projections -------------------------------------------------------------


def project_capped_simplex(x, upper, total, equality=True):
    """Euclidean projection of each row of ``x`` onto ``{0 <= y <= upper, sum(y) = total}``.

    With ``equality=False`` the sum constraint is ``sum(y) <= total``.  The
    shift ``tau`` in ``y = clip(x - tau, 0, upper)`` is found exactly from the
    sorted breakpoints of the piecewise-linear sum.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    u = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    total = np.broadcast_to(np.asarray(total, dtype=float), x.shape[:1])
    if np.any(total > u.sum(axis=-1) * (1 + 1e-12)) or np.any(total < 0):
        raise Infeasible("sum target outside [0, sum(upper)]")
    clipped = np.clip(x, 0.0, u)
    bp = np.sort(np.concatenate([x, x - u], axis=-1), axis=-1)
    phi = np.clip(x[:, None, :] - bp[:, :, None], 0.0, u[:, None, :]).sum(axis=-1)
    # phi is non-increasing along bp; bracket the target
    j = np.clip((phi >= total[:, None]).sum(axis=-1) - 1, 0, bp.shape[1] - 2)
    rows = np.arange(x.shape[0])
    b0, b1 = bp[rows, j], bp[rows, j + 1]
    p0, p1 = phi[rows, j], phi[rows, j + 1]
    slope = p0 - p1
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(slope > 0, b0 + (p0 - total) / slope * (b1 - b0), b0)
    y = np.clip(x - tau[:, None], 0.0, u)
    if not equality:
        y = np.where((clipped.sum(axis=-1) <= total)[:, None], clipped, y)
    return y[0] if squeeze else y


# --- substitution b <-> z ----------------------------------------------------


@dataclass(frozen=True)
class TransformParams:
    """Substitution ``b = xi1 + xi2 log(xi3 z)`` and the induced z-space bounds."""

    xi1: float
    xi2: float
    xi3: float

    @classmethod
    def table1(cls):
        return cls(*TABLE1_XI)

    def b_from_z(self, z):
        return self.xi1 + self.xi2 * np.log(self.xi3 * np.asarray(z, dtype=float))

    def z_from_b(self, b):
        return np.exp((np.asarray(b, dtype=float) - self.xi1) / self.xi2) / self.xi3

    def log_z_from_b(self, b):
        """``log(xi3 z)``, the log-domain coordinate (affine in b)."""
        return (np.asarray(b, dtype=float) - self.xi1) / self.xi2

    def b_from_log_z(self, v):
        return self.xi1 + self.xi2 * np.asarray(v, dtype=float)

    def z_min(self):
        return math.exp(-self.xi1 / self.xi2) / self.xi3

    def z_max(self, b_max):
        return math.exp((b_max - self.xi1) / self.xi2) / self.xi3

    def log_sum_target(self, b_tot, n_s):
        """Right-hand side of ``sum_s log(xi3 z_s) = (b_tot - n_s xi1) / xi2``."""
        return (b_tot - n_s * self.xi1) / self.xi2

    def log_z_tot(self, b_tot, n_s):
        """log of the product bound ``prod z_s^xi2`` implied by the bandwidth sum."""
        return -self.xi2 * n_s * math.log(self.xi3) + (b_tot - self.xi1 * n_s)

    def log_z_tot_printed(self, b_tot, n_s):
        """log of the product bound exactly as printed (exponential raised to n_s)."""
        return n_s * (-self.xi2 * math.log(self.xi3) + (b_tot - self.xi1 * n_s))


# --- KKT ---------------------------------------------------------------------


@dataclass
class Multipliers:
    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma1: np.ndarray = None  # p >= 0
    gamma2: np.ndarray = None  # p <= p_max
    gamma3: np.ndarray = None  # b >= 0
    gamma4: np.ndarray = None  # b <= b_max

    def filled(self, n):
        z = np.zeros(n)
        return Multipliers(
            float(self.lambda1), float(self.lambda2),
            *(z.copy() if g is None else np.asarray(g, dtype=float)
              for g in (self.gamma1, self.gamma2, self.gamma3, self.gamma4)))


@dataclass
class KKTReport:
    """KKT residuals of the allocation problem.

    ``primal_residuals`` are in SI units (W or Hz).  Stationarity and
    complementarity are scaled by the box sizes p_max and b_max, i.e.
    expressed per unit of the normalised variables p / p_max and b / b_max.
    """

    stationarity_residual: float
    primal_residuals: dict
    dual_multipliers: Multipliers
    complementarity_residuals: dict
    scale: dict = field(default_factory=dict)

    def max_scaled_residual(self):
        primal = max(self.primal_residuals[k] / self.scale[k] for k in self.primal_residuals)
        comp = max(self.complementarity_residuals.values(), default=0.0)
        return max(self.stationarity_residual, primal, comp)

    def to_dict(self):
        m = self.dual_multipliers
        return {
            "stationarity_residual": self.stationarity_residual,
            "primal_residuals": dict(self.primal_residuals),
            "complementarity_residuals": dict(self.complementarity_residuals),
            "max_scaled_residual": self.max_scaled_residual(),
            "multipliers": {"lambda1": m.lambda1, "lambda2": m.lambda2,
                            **{f"gamma{i}": np.asarray(g).tolist()
                               for i, g in enumerate((m.gamma1, m.gamma2, m.gamma3, m.gamma4), 1)}},
        }


def objective_gradient_fd(objective, p, b, p_scale, b_scale, rel_step=1e-6):
    """Central finite-difference gradient of ``objective(p, b)``.

    Steps are ``rel_step`` times the box scale, shrunk near the lower bound
    so that no evaluation sees a negative coordinate.
    """
    p = np.asarray(p, dtype=float)
    b = np.asarray(b, dtype=float)
    n = p.size
    gp, gb = np.empty(n), np.empty(n)
    for vec, scale, out, which in ((p, p_scale, gp, 0), (b, b_scale, gb, 1)):
        for i in range(n):
            h = rel_step * scale
            lo = min(h, vec[i])
            e_plus, e_minus = vec.copy(), vec.copy()
            e_plus[i] += h
            e_minus[i] -= lo
            args_p = (e_plus, b) if which == 0 else (p, e_plus)
            args_m = (e_minus, b) if which == 0 else (p, e_minus)
            if lo > 0:
                out[i] = (objective(*args_p) - objective(*args_m)) / (h + lo)
            else:
                out[i] = (objective(*args_p) - objective(p, b)) / h
    return gp, gb


def estimate_multipliers(scenario, p, b, grad_p, grad_b, optimize_b=True, bound_tol=1e-7):
    """Multipliers consistent with stationarity of ``-E + ...`` at (p, b).

    Sum multipliers are averaged over coordinates strictly inside their box;
    bound multipliers absorb the remaining gradient on active bounds.
    """
    bud, spec = scenario.budget, scenario.spectrum
    n = p.size

    def block(x, g, ub, total, tight):
        at_lo = x <= bound_tol * ub
        at_hi = x >= ub * (1 - bound_tol)
        free = ~(at_lo | at_hi)
        lam = 0.0
        if tight:
            src = g[free] if free.any() else g
            lam = float(np.mean(src))
        # d(-E)/dx + lam - g_lo + g_hi = 0
        resid = -g + lam
        g_lo = np.where(at_lo, np.maximum(resid, 0.0), 0.0)
        g_hi = np.where(at_hi, np.maximum(-resid, 0.0), 0.0)
        return lam, g_lo, g_hi

    budget_tight = p.sum() >= bud.p_tot * (1 - 1e-7)
    lam1, g1, g2 = block(p, grad_p, bud.p_max, bud.p_tot, budget_tight)
    if optimize_b:
        lam2, g3, g4 = block(b, grad_b, spec.b_max, spec.b_tot, True)
    else:
        lam2, g3, g4 = 0.0, np.zeros(n), np.zeros(n)
    return Multipliers(max(lam1, 0.0), lam2, g1, g2, g3, g4)


def kkt_report(scenario, p, b, multipliers, objective=None, grad=None, optimize_b=True, quad=None):
    """KKT residuals of ``max E`` subject to the power and bandwidth constraints.

    ``objective(p, b)`` defaults to the quadrature objective of ``scenario``;
    its gradient is taken by central finite differences unless ``grad`` (a
    ``(grad_p, grad_b)`` pair) is supplied.  With ``optimize_b=False`` the
    bandwidths are treated as fixed data and only the power block is checked.
    """
    p = np.asarray(p, dtype=float)
    b = np.asarray(b, dtype=float)
    if p.shape != (scenario.n_s,) or b.shape != (scenario.n_s,):
        raise DimensionMismatch("p and b need one entry per sub-band")
    bud, spec = scenario.budget, scenario.spectrum
    m = multipliers.filled(scenario.n_s)
    if grad is None:
        if objective is None:
            quad = quad or _rate.QuadratureSpec()
            objective = lambda pp, bb: _rate.evaluate(scenario, quad, pp, bb).objective_e  # noqa: E731
        grad = objective_gradient_fd(objective, p, b, bud.p_max, spec.b_max)
    gp, gb = grad
    stat_p = (-gp + m.lambda1 - m.gamma1 + m.gamma2) * bud.p_max
    stat = np.abs(stat_p)
    if optimize_b:
        stat_b = (-gb + m.lambda2 - m.gamma3 + m.gamma4) * spec.b_max
        stat = np.concatenate([stat, np.abs(stat_b)])
    primal = {
        "power_budget": max(p.sum() - bud.p_tot, 0.0),
        "power_lower": float(np.max(np.maximum(-p, 0.0))),
        "power_upper": float(np.max(np.maximum(p - bud.p_max, 0.0))),
        "bandwidth_total": abs(b.sum() - spec.b_tot) if optimize_b else 0.0,
        "bandwidth_lower": float(np.max(np.maximum(-b, 0.0))),
        "bandwidth_upper": float(np.max(np.maximum(b - spec.b_max, 0.0))),
    }
    scale = {"power_budget": bud.p_tot, "power_lower": bud.p_max, "power_upper": bud.p_max,
             "bandwidth_total": spec.b_tot, "bandwidth_lower": spec.b_max, "bandwidth_upper": spec.b_max}
    comp = {
        "power_budget": abs(m.lambda1 * (bud.p_tot - p.sum())),
        "power_lower": float(np.max(np.abs(m.gamma1 * p))),
        "power_upper": float(np.max(np.abs(m.gamma2 * (bud.p_max - p)))),
    }
    if optimize_b:
        comp.update({
            "bandwidth_lower": float(np.max(np.abs(m.gamma3 * b))),
            "bandwidth_upper": float(np.max(np.abs(m.gamma4 * (spec.b_max - b)))),
        })
    # multipliers carry units of 1/W or 1/Hz; products with W or Hz are already dimensionless
    return KKTReport(float(np.max(stat)), primal, m, comp, scale)


# --- spectral projected gradient ---------------------------------------------


def spg_minimize(fun_grad, project, x0, tol=1e-8, max_iter=5000, armijo=1e-4):
    """Minimise ``fun_grad`` over a convex set row by row.

    ``fun_grad(x)`` maps ``(B, m)`` to ``(f (B,), g (B, m))`` and
    ``project`` is the Euclidean projection.  Stops per row once the
    projected-gradient step ``|P(x - g) - x|_inf`` falls below ``tol``, or
    when the objective stops changing at machine precision.
    Returns ``(x, f, converged, iterations)``.
    """
    x = project(np.array(x0, dtype=float))
    f, g = fun_grad(x)
    B = x.shape[0]
    pg = np.max(np.abs(project(x - g) - x), axis=1)
    alpha = 1.0 / np.maximum(pg, 1e-12)
    alpha = np.clip(alpha, 1e-10, 1e10)
    active = pg >= tol
    stalled_any = np.zeros(B, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        if not active.any():
            break
        d = project(x - alpha[:, None] * g) - x
        gd = np.sum(g * d, axis=1)
        lam = np.ones(B)
        for _ in range(40):
            xn = x + lam[:, None] * d
            fn, gn = fun_grad(xn)
            ok = (fn <= f + armijo * lam * gd) | ~active
            if ok.all():
                break
            lam = np.where(ok, lam, 0.5 * lam)
        else:
            # no descent left at machine precision on the failing rows
            stuck = ~ok
            active &= ~stuck
            xn = np.where(stuck[:, None], x, xn)
            fn = np.where(stuck, f, fn)
            gn = np.where(stuck[:, None], g, gn)
        f_prev = f
        s = xn - x
        y = gn - g
        sy = np.sum(s * y, axis=1)
        ss = np.sum(s * s, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            new_alpha = np.where(sy > 0, ss / sy, 1e10)
        upd = active
        x = np.where(upd[:, None], xn, x)
        f = np.where(upd, fn, f)
        g = np.where(upd[:, None], gn, g)
        alpha = np.where(upd, np.clip(new_alpha, 1e-10, 1e10), alpha)
        pg = np.max(np.abs(project(x - g) - x), axis=1)
        stalled = np.abs(fn - f_prev) <= 4 * np.finfo(float).eps * np.abs(f_prev)
        stalled_any |= stalled & active
        active &= (pg >= tol) & ~stalled
    pg = np.max(np.abs(project(x - g) - x), axis=1)
    # a row whose objective no longer moves at machine precision is at its
    # attainable optimum; accept it if the projected step is still small
    converged = (pg < tol) | (stalled_any & (pg < math.sqrt(tol)))
    spg_minimize.last_pg = pg
    return x, f, converged, it


# --- results -----------------------------------------------------------------


@dataclass
class SolveResult:
    p: np.ndarray
    b: np.ndarray
    rate: _rate.RateResult
    kkt: KKTReport
    solver_tag: SolverTag
    converged: bool = True
    model_objective: float = None
    z: np.ndarray = None

    def to_dict(self):
        return {
            "solver": self.solver_tag.value,
            "p_w": self.p.tolist(),
            "b_hz": self.b.tolist(),
            "r_bps": self.rate.r.tolist(),
            "r_ag_bps": self.rate.r_ag,
            "objective_e": self.rate.objective_e,
            "converged": bool(self.converged),
            "kkt": self.kkt.to_dict() if self.kkt is not None else None,
        }


def _as_batch(scenario, d):
    d = scenario.d[None, :] if d is None else np.atleast_2d(np.asarray(d, dtype=float))
    if d.shape[1] != scenario.n_s:
        raise DimensionMismatch(f"distance rows must have length {scenario.n_s}")
    return d


def _check_feasible(scenario):
    spec = scenario.spectrum
    if spec.b_tot > spec.n_s * spec.b_max * (1 + 1e-12):
        raise Infeasible("b_tot exceeds n_s * b_max")


# --- convex special case -----------------------------------------------------


def solve_special_case_batch(scenario, fit, d=None, xi=None, tol=1e-8, max_iter=5000):
    """Convex-transform solver for a batch of distance vectors.

    ``fit`` is the exponential absorption model used inside the rate
    (possibly a poor fit of the true k(f)).  Iterates are held as
    ``(p / p_max, log(xi3 z) * xi2 / b_max)``; in the log domain the
    bandwidth-sum constraint ``sum log(xi3 z) = (b_tot - n xi1) / xi2`` is
    linear, and the z box is a box.

    Returns ``(p, b, z, model_objective, converged)`` arrays.
    """
    _check_feasible(scenario)
    xi = xi or TransformParams.table1()
    d = _as_batch(scenario, d)
    B, n = d.shape
    bud, spec = scenario.budget, scenario.spectrum
    pm, bm = bud.p_max, spec.b_max
    # scaled log-z coordinate: u = xi2 * log(xi3 z) / b_max, so b = xi1 + bm * u
    u_lo = xi.xi2 * math.log(xi.xi3 * xi.z_min()) / bm
    u_hi = xi.xi2 * math.log(xi.xi3 * xi.z_max(bm)) / bm
    u_sum = xi.xi2 * xi.log_sum_target(spec.b_tot, n) / bm

    def split(x):
        return x[:, :n] * pm, xi.b_from_log_z(x[:, n:] * bm / xi.xi2)

    def fun_grad(x):
        p, b = split(x)
        e, gp, gb = _rate.closed_form_objective_grad(scenario, fit, p, b, d)
        return -e, np.concatenate([-gp * pm, -gb * bm], axis=1)

    def project(x):
        xp = project_capped_simplex(x[:, :n], 1.0, bud.p_tot / pm, equality=False)
        xu = project_capped_simplex(x[:, n:] - u_lo, u_hi - u_lo, u_sum - n * u_lo) + u_lo
        return np.concatenate([xp, xu], axis=1)

    x0 = np.concatenate([
        np.full((B, n), min(bud.p_tot / n, pm) / pm),
        np.full((B, n), u_lo + (spec.b_tot / n) / bm),
    ], axis=1)
    x, f, conv, _ = spg_minimize(fun_grad, project, x0, tol=tol, max_iter=max_iter)
    log_z = x[:, n:] * bm / xi.xi2
    z = np.exp(log_z) / xi.xi3
    p = x[:, :n] * pm
    b = np.clip(xi.b_from_z(z), 0.0, bm)
    return p, b, z, -f, conv


def solve_special_case(scenario, fit=None, xi=None, tol=1e-8, quad=None, max_iter=5000):
    """Solve the transformed convex problem for ``scenario.d``.

    ``fit`` defaults to ``scenario.absorption`` (which must then be
    exponential).  The reported rate is re-evaluated by quadrature on the
    scenario's own absorption model.
    """
    fit = scenario.absorption if fit is None else fit
    if not isinstance(fit, ExponentialAbsorption):
        raise TypeError("the special-case solver needs an exponential absorption model")
    quad = quad or _rate.QuadratureSpec()
    p, b, z, obj, conv = solve_special_case_batch(scenario, fit, None, xi, tol, max_iter)
    p, b, z = p[0], b[0], z[0]
    _, gp, gb = _rate.closed_form_objective_grad(scenario, fit, p, b)
    mult = estimate_multipliers(scenario, p, b, gp, gb)
    kkt = kkt_report(scenario, p, b, mult, grad=(gp, gb))
    return SolveResult(p, b, _rate.evaluate(scenario, quad, p, b), kkt,
                       SolverTag.CONVEX_SPECIAL_CASE, bool(conv[0]), float(obj[0]), z)


# --- ESB ---------------------------------------------------------------------


def solve_esb_batch(scenario, quad=None, d=None, tol=1e-8, max_iter=5000):
    """Proportional-fair power allocation with equal bandwidths b_tot / n_s.

    Returns ``(p, b, objective, converged)`` arrays.
    """
    quad = quad or _rate.QuadratureSpec()
    d = _as_batch(scenario, d)
    B, n = d.shape
    bud, spec = scenario.budget, scenario.spectrum
    b = np.full((B, n), spec.b_tot / n)
    f = scenario.spectrum.epsilon_f + np.cumsum(b, axis=1) - 0.5 * b
    pm = bud.p_max

    def fun_grad(x):
        p = x * pm
        r, dr = _rate.rates_at(scenario, quad, p, b, f, d, with_dp=True)
        rr = np.maximum(r, _rate.R_FLOOR)
        g = np.where(r > _rate.R_FLOOR, dr / rr, 0.0)
        return -np.sum(np.log(rr), axis=1), -g * pm

    def project(x):
        return project_capped_simplex(x, 1.0, bud.p_tot / pm, equality=False)

    x0 = np.full((B, n), min(bud.p_tot / n, pm) / pm)
    x, fval, conv, _ = spg_minimize(fun_grad, project, x0, tol=tol, max_iter=max_iter)
    return x * pm, b, -fval, conv


def solve_esb(scenario, quad=None, tol=1e-8, max_iter=5000):
    quad = quad or _rate.QuadratureSpec()
    p, b, obj, conv = solve_esb_batch(scenario, quad, None, tol, max_iter)
    p, b = p[0], b[0]
    r, dr = _rate.subband_rates(scenario, quad, p, b, with_dp=True)
    gp = np.where(r > _rate.R_FLOOR, dr / np.maximum(r, _rate.R_FLOOR), 0.0)
    mult = estimate_multipliers(scenario, p, b, gp, np.zeros_like(gp), optimize_b=False)
    kkt = kkt_report(scenario, p, b, mult, optimize_b=False, quad=quad)
    return SolveResult(p, b, _rate.evaluate(scenario, quad, p, b), kkt, SolverTag.ESB,
                       bool(conv[0]), float(obj[0]))


# --- grid oracle -------------------------------------------------------------


def grid_oracle(scenario, quad=None, grid_density=200, closed_form=None, fixed_b=None):
    """Exhaustive search on a grid over the budget-tight feasible set (n_s <= 3).

    The first ``n_s - 1`` powers and bandwidths are gridded over the
    interval allowed by their boxes; the last entries take up the remaining
    budget ``p_tot`` and bandwidth ``b_tot`` and are box-filtered.  With
    ``closed_form`` (an exponential model) the objective uses the midpoint
    rate, otherwise quadrature.  ``fixed_b`` freezes the bandwidths.

    The returned result carries ``n_evaluated``, the number of grid points.
    """
    n = scenario.n_s
    if n > 3:
        raise TooLarge("grid oracle supports n_s <= 3")
    quad = quad or _rate.QuadratureSpec()
    bud, spec = scenario.budget, scenario.spectrum

    def axis(total, ub):
        lo = max(0.0, total - (n - 1) * ub)
        return np.linspace(lo, min(ub, total), grid_density)

    def simplex_points(total, ub):
        if n == 1:
            return np.array([[min(total, ub)]])
        ax = axis(total, ub)
        heads = np.array(list(itertools.product(ax, repeat=n - 1)))
        last = total - heads.sum(axis=1)
        pts = np.column_stack([heads, last])
        tol = 1e-12 * ub
        keep = (last >= -tol) & (last <= ub + tol)
        return np.clip(pts[keep], 0.0, ub), heads.shape[0]

    if n == 1:
        P, n_p = np.array([[min(bud.p_tot, bud.p_max)]]), 1
        Bw, n_b = np.array([[spec.b_tot]]), 1
    else:
        P, n_p = simplex_points(bud.p_tot, bud.p_max)
        if fixed_b is not None:
            Bw, n_b = np.atleast_2d(np.asarray(fixed_b, dtype=float)), 1
        else:
            Bw, n_b = simplex_points(spec.b_tot, spec.b_max)
    pp = np.repeat(P, Bw.shape[0], axis=0)
    bb = np.tile(Bw, (P.shape[0], 1))
    dd = np.broadcast_to(scenario.d, pp.shape)
    best_val, best_i = -np.inf, None
    chunk = 20000
    for start in range(0, pp.shape[0], chunk):
        sl = slice(start, start + chunk)
        if closed_form is not None:
            r = _rate.closed_form_rates(scenario, closed_form, pp[sl], bb[sl], dd[sl])
        else:
            r = _rate.subband_rates(scenario, quad, pp[sl], bb[sl], dd[sl])
        e = _rate.objective(r)
        i = int(np.argmax(e))
        if e[i] > best_val:
            best_val, best_i = float(e[i]), start + i
    p, b = pp[best_i].copy(), bb[best_i].copy()
    result = SolveResult(p, b, _rate.evaluate(scenario, quad, p, b), None, SolverTag.GRID_ORACLE,
                         True, best_val)
    result.n_evaluated = n_p * n_b
    return result

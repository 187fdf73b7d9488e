"""Command-line entry point ``thzlab``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import absorption as _abs
from . import baseline as _bl
from . import neural as _nn
from . import rate as _rate
from . import trainer as _tr
from .errors import (DimensionMismatch, FitDiverged, FrequencyOutOfDomain, Infeasible, InsufficientData,
                     InvalidConfig, NonFiniteIntegrand, NonFiniteLoss, TooLarge)
from .experiments import ExperimentConfig, parse_override, run
from .scenario import Scenario, table1_defaults

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_ERRORS = (InvalidConfig, DimensionMismatch, FrequencyOutOfDomain, InsufficientData, Infeasible,
                 TooLarge, FileNotFoundError, json.JSONDecodeError)
NUMERIC_ERRORS = (FitDiverged, NonFiniteIntegrand, NonFiniteLoss, FloatingPointError)


def _cmd_run(args):
    overrides = dict(parse_override(s) for s in args.set or [])
    cfg = ExperimentConfig(args.experiment, args.seed, args.scale, overrides, Path(args.out))
    manifest = run(cfg)
    summary = json.loads((cfg.output_dir / "summary.json").read_text(encoding="utf-8"))
    print(json.dumps({"manifest": manifest, "summary": summary}, indent=2))


def _cmd_fit(args):
    table = _abs.AbsorptionTable.from_csv(args.csv)
    model, err = _abs.fit_exponential(table, args.range[0], args.range[1])
    print(json.dumps({"eta": list(model.eta), "f_lo_hz": model.f_lo, "f_hi_hz": model.f_hi,
                      "max_rel_error": err}, indent=2))


def _cmd_solve(args):
    scenario = Scenario.load(args.scenario)
    quad = _rate.QuadratureSpec()
    if args.solver == "convex":
        fit = scenario.absorption
        extra = {}
        if not isinstance(fit, _abs.ExponentialAbsorption):
            spec = scenario.spectrum
            table = _abs.tabulate(fit, spec.epsilon_f, spec.epsilon_f + spec.b_tot) \
                if not isinstance(fit, _abs.TableAbsorption) else fit.table
            fit, err = _abs.fit_exponential(table, spec.epsilon_f, spec.epsilon_f + spec.b_tot)
            extra = {"fit_eta": list(fit.eta), "fit_max_rel_error": err}
        doc = {**_bl.solve_special_case(scenario, fit, quad=quad).to_dict(), **extra}
    elif args.solver == "esb":
        doc = _bl.solve_esb(scenario, quad).to_dict()
    else:
        if not args.checkpoint:
            raise InvalidConfig("--solver learned needs --checkpoint")
        state = _tr.load_checkpoint(args.checkpoint, scenario, quad)
        p, b, res = _tr.infer(state, scenario.d)
        doc = {"solver": _bl.SolverTag.LEARNED.value, "p_w": p.tolist(), "b_hz": b.tolist(),
               "r_bps": res.r.tolist(), "r_ag_bps": res.r_ag, "objective_e": res.objective_e,
               "power_residual_w": float(p.sum() - scenario.budget.p_tot),
               "bandwidth_residual_hz": float(b.sum() - scenario.spectrum.b_tot)}
    print(json.dumps(doc, indent=2))


def run_checks():
    """Fast oracle suite; returns a list of ``(name, passed, detail)``."""
    out = []
    geo, bud, spec = table1_defaults(2, b_tot=8e9)
    model = _abs.ExponentialAbsorption(1.5, -2e-11, 0.1, spec.epsilon_f, spec.f_hi)
    toy = Scenario([3.0, 9.0], geo, bud, spec, model)
    quad = _rate.QuadratureSpec()

    cvx = _bl.solve_special_case(toy, quad=quad)
    grid = _bl.grid_oracle(toy, quad, 200, closed_form=model)
    rel = abs(cvx.model_objective - grid.model_objective) / abs(grid.model_objective)
    out.append(("convex vs grid oracle", rel <= 5e-3 and cvx.kkt.max_scaled_residual() < 1e-4,
                f"rel {rel:.2e}, kkt {cvx.kkt.max_scaled_residual():.2e}"))

    esb = _bl.solve_esb(toy, quad)
    g_esb = _bl.grid_oracle(toy, quad, 200, fixed_b=np.full(2, spec.b_tot / 2))
    rel = abs(esb.rate.objective_e - g_esb.rate.objective_e) / abs(g_esb.rate.objective_e)
    out.append(("esb vs grid oracle", rel <= 1e-3 and esb.kkt.max_scaled_residual() < 1e-4,
                f"rel {rel:.2e}, kkt {esb.kkt.max_scaled_residual():.2e}"))

    b = np.array([0.3e9, 0.5e9])
    p = np.array([0.4, 0.6]) * bud.p_tot
    r_q = _rate.subband_rates(toy, quad, p, b)
    r_c = _rate.closed_form_rates(toy, model, p, b)
    rel = float(np.max(np.abs(r_q - r_c) / r_c))
    out.append(("quadrature vs closed form", rel <= 1e-6, f"rel {rel:.2e}"))

    xi = _bl.TransformParams.table1()
    bb = np.linspace(0, spec.b_max, 101)
    rt = float(np.max(np.abs(xi.b_from_z(xi.z_from_b(bb)) - bb)) / spec.b_max)
    out.append(("b-z round trip", rt <= 1e-12, f"rel {rt:.2e}"))

    arch = [_nn.LayerSpec(6, _nn.Activation.RELU), _nn.LayerSpec(4, _nn.Activation.SCALED_SIGMOID, (2.0,) * 4)]
    net = _nn.init(arch, 3, 0, _nn.InitScheme.SCALED)
    x = np.random.default_rng(0).uniform(0.5, 2.0, (5, 3))
    w = np.random.default_rng(1).standard_normal((5, 4))
    grads = np.concatenate([g.ravel() for g in _nn.backward(net, _nn.forward(net, x)[1], w)])
    theta = net.flat()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = 1e-6
        fd[i] = (np.sum(w * _nn.forward(net.unflat(theta + e), x)[0])
                 - np.sum(w * _nn.forward(net.unflat(theta - e), x)[0])) / 2e-6
    rel = float(np.max(np.abs(grads - fd)) / max(np.max(np.abs(fd)), 1e-300))
    out.append(("backprop vs finite differences", rel <= 1e-5, f"rel {rel:.2e}"))
    return out


def _cmd_check(_args):
    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def build_parser():
    ap = argparse.ArgumentParser(prog="thzlab", description="THz sub-band and power allocation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--experiment", required=True, choices=["fig4", "fig5", "fig6"])
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--scale", choices=["desk", "paper"], default="desk")
    r.add_argument("--out", required=True)
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=_cmd_run)

    f = sub.add_parser("fit-absorption", help="fit the exponential absorption model to a CSV table")
    f.add_argument("--csv", required=True)
    f.add_argument("--range", nargs=2, type=float, required=True, metavar=("F_LO", "F_HI"))
    f.set_defaults(func=_cmd_fit)

    s = sub.add_parser("solve", help="solve one scenario")
    s.add_argument("--solver", required=True, choices=["learned", "convex", "esb"])
    s.add_argument("--scenario", required=True)
    s.add_argument("--checkpoint")
    s.set_defaults(func=_cmd_solve)

    c = sub.add_parser("check", help="run the oracle self-check suite")
    c.set_defaults(func=_cmd_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())

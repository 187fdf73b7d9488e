"""Acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; the lines are also printed in
the terminal summary (see ``conftest.py``).
"""
import json

import numpy as np
import pytest

from thzlab import absorption as A
from thzlab import baseline as BL
from thzlab import experiments as E
from thzlab import neural as N
from thzlab import rate as R
from thzlab import scenario as S
from thzlab import trainer as T

from conftest import ETA

ACCEPTANCE_LINES = {}


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def summary(out):
    return json.loads((out / "summary.json").read_text())


@pytest.fixture(scope="module")
def fig5_runs(tmp_path_factory):
    outs = {}
    for seed in (7, 8, 9):
        out = tmp_path_factory.mktemp(f"fig5_seed{seed}")
        E.run(E.ExperimentConfig("fig5", seed, "desk", {}, out))
        outs[seed] = out
    return outs


@pytest.fixture(scope="module")
def fig6_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig6_seed7")
    E.run(E.ExperimentConfig("fig6", 7, "desk", {}, out))
    return out


def test_1_convergence_to_optimal(fig4_run):
    s = summary(fig4_run[0])
    ratio = s["learned_over_convex"]
    report(1, 0.97 <= ratio <= 1.03,
           f"learned/convex mean R_AG = {ratio:.4f} (learned {s['final_learned_r_ag_bps']:.4e}, "
           f"convex {s['convex_r_ag_bps']:.4e} bit/s), band [0.97, 1.03]")


def test_2_constraint_satisfaction(fig4_run):
    s = summary(fig4_run[0])
    rp, rb = s["mean_abs_power_residual_rel"], s["mean_abs_bandwidth_residual_rel"]
    report(2, rp <= 0.02 and rb <= 0.02,
           f"last-50 mean |power residual| = {rp:.2e} p_tot, |bandwidth residual| = {rb:.2e} b_tot (<= 0.02)")


def test_3_early_overshoot(fig4_run):
    hist = T.read_log(fig4_run[0] / "training_log.csv")
    its = E.overshoot_iterations(hist, 50)
    report(3, len(its) > 0, f"{len(its)} of the first 50 iterations overshoot with a positive residual "
                            f"(first: {its[:5]})")


def test_4_non_exponential_superiority(fig5_runs):
    ratios = {seed: summary(out)["learned_over_convex"] for seed, out in fig5_runs.items()}
    fits = {seed: summary(out)["fit_max_rel_error"] for seed, out in fig5_runs.items()}
    wins = sum(r >= 1.0 for r in ratios.values())
    detail = ", ".join(f"seed {s}: {r:.4f} (fit error {fits[s]:.2f})" for s, r in ratios.items())
    report(4, wins == 3, f"learned/convex-with-fit on {wins} of 3 seeds >= 1: {detail}")


def test_5_asb_beats_esb(fig6_run):
    rows = summary(fig6_run)["rows"]
    wins = [r["r_ag_learned_bps"] > r["r_ag_esb_bps"] for r in rows]
    detail = ", ".join(f"{r['b_max_hz'] / 1e9:g} GHz: {r['r_ag_learned_bps'] / r['r_ag_esb_bps']:.4f}"
                       for r in rows)
    report(5, len(rows) == 4 and all(wins), f"learned/ESB R_AG per b_max: {detail}")


def test_6_rate_model_consistency():
    geo, bud, spec = S.table1_defaults()
    model = A.ExponentialAbsorption(*ETA, spec.epsilon_f, spec.f_hi)
    rng = np.random.default_rng(2024)
    worst_cf, worst_self = 0.0, 0.0
    q33, q65 = R.QuadratureSpec(nodes_per_subband=33), R.QuadratureSpec(nodes_per_subband=65)
    for k in range(20):
        sc = S.Scenario(S.sample_distances(geo, spec.n_s, k), geo, bud, spec, model)
        p = rng.dirichlet(np.ones(spec.n_s)) * bud.p_tot
        b = rng.uniform(0.01e9, 0.5e9, spec.n_s)
        r33 = R.subband_rates(sc, q33, p, b)
        r65 = R.subband_rates(sc, q65, p, b)
        rc = R.closed_form_rates(sc, model, p, b)
        worst_cf = max(worst_cf, float(np.max(np.abs(r33 - rc) / rc)))
        # self-convergence over the full bandwidth range
        b_wide = rng.dirichlet(np.ones(spec.n_s)) * spec.b_tot
        b_wide = BL.project_capped_simplex(b_wide, spec.b_max, spec.b_tot)
        w33 = R.subband_rates(sc, q33, p, b_wide)
        w65 = R.subband_rates(sc, q65, p, b_wide)
        worst_self = max(worst_self, float(np.max(np.abs(w33 - w65) / w65)),
                         float(np.max(np.abs(r33 - r65) / r65)))
    report(6, worst_cf <= 1e-6 and worst_self <= 1e-8,
           f"quadrature vs closed form max rel {worst_cf:.2e} (<= 1e-6); 33 vs 65 nodes max rel "
           f"{worst_self:.2e} (<= 1e-8)")


def _backprop_vs_central(net, x, w):
    g = np.concatenate([a.ravel() for a in N.backward(net, N.forward(net, x)[1], w)])
    theta = net.flat()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (np.sum(w * N.forward(net.unflat(up), x)[0]) - np.sum(w * N.forward(net.unflat(dn), x)[0])) / (2 * h)
    return float(np.max(np.abs(g - fd)) / np.max(np.abs(fd)))


def _end_to_end(seed):
    geo, bud, spec = S.table1_defaults(3, b_tot=12e9)
    model = A.ExponentialAbsorption(*ETA, spec.epsilon_f, spec.f_hi)
    batch = S.sample_distances(geo, 3, seed, n_samples=4)
    sc = S.Scenario(batch[0], geo, bud, spec, model)
    net = N.init(N.paper_architecture(3, bud.p_max, spec.b_max, hidden=(8, 6)), 3, seed,
                 N.InitScheme.SCALED, geo.d_max)
    quad = R.QuadratureSpec()
    lam = np.array([0.2 / bud.p_max, 0.1 / spec.b_max])

    def j_of(theta):
        y, _ = N.forward(net.unflat(theta), batch)
        return float(np.mean(T.lagrangian_hat(sc, quad, batch, y[:, :3], y[:, 3:], lam)))

    y, tape = N.forward(net, batch)
    gp, gb = T.fd_objective_gradients(sc, quad, batch, y[:, :3], y[:, 3:], epsilon_fd=1e-7)
    seed_vec = np.concatenate([-gp + lam[0], -gb + lam[1]], axis=1) / batch.shape[0]
    grad = np.concatenate([a.ravel() for a in N.backward(net, tape, seed_vec)])
    theta = net.flat()
    live = np.flatnonzero(np.abs(grad) > 1e-6 * np.max(np.abs(grad)))
    idx = np.random.default_rng(seed).choice(live, size=10, replace=False)
    fd = np.empty(10)
    for k, i in enumerate(idx):
        h = 1e-5 * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd[k] = (j_of(up) - j_of(dn)) / (2 * h)
    return float(np.max(np.abs(grad[idx] - fd)) / np.max(np.abs(fd)))


def test_7_gradient_correctness():
    errs = []
    for seed, (n_in, hidden) in enumerate([(3, (10, 8)), (2, (6, 6, 4)), (4, (12,))]):
        n_out = 2 * n_in
        arch = [N.LayerSpec(w) for w in hidden] + [
            N.LayerSpec(n_out, N.Activation.SCALED_SIGMOID, tuple(np.linspace(0.5, 2.0, n_out)))]
        net = N.init(arch, n_in, seed, N.InitScheme.SCALED)
        assert net.n_params <= 200
        rng = np.random.default_rng(seed)
        errs.append(_backprop_vs_central(net, rng.uniform(0.2, 2.0, (6, n_in)),
                                         rng.standard_normal((6, n_out))))
    e2e = [_end_to_end(s) for s in (1, 2)]
    report(7, max(errs) <= 1e-5 and max(e2e) <= 1e-3,
           f"backprop vs central FD max rel {max(errs):.2e} (<= 1e-5); "
           f"end-to-end Lagrangian spot checks max rel {max(e2e):.2e} (<= 1e-3)")


def test_8_solver_oracle_equivalence(toy, quad):
    cvx = BL.solve_special_case(toy, quad=quad)
    g_cvx = BL.grid_oracle(toy, quad, 200, closed_form=toy.absorption)
    rel_cvx = abs(cvx.model_objective - g_cvx.model_objective) / abs(g_cvx.model_objective)
    esb = BL.solve_esb(toy, quad)
    g_esb = BL.grid_oracle(toy, quad, 200, fixed_b=np.full(2, toy.spectrum.b_tot / 2))
    rel_esb = abs(esb.rate.objective_e - g_esb.rate.objective_e) / abs(g_esb.rate.objective_e)
    kkt = max(cvx.kkt.max_scaled_residual(), esb.kkt.max_scaled_residual())
    report(8, rel_cvx <= 5e-3 and rel_esb <= 1e-3 and kkt < 1e-4,
           f"convex vs grid rel {rel_cvx:.2e} (<= 5e-3), ESB vs grid rel {rel_esb:.2e} (<= 1e-3), "
           f"max scaled KKT residual {kkt:.2e} (< 1e-4)")


def test_9_substitution_correctness(exp_scenario, quad):
    spec = exp_scenario.spectrum
    xi = BL.TransformParams.table1()
    b = np.linspace(0, spec.b_max, 10001)
    rt = float(np.max(np.abs(xi.b_from_z(xi.z_from_b(b)) - b)) / spec.b_max)
    d = S.sample_distances(exp_scenario.geometry, spec.n_s, 99, n_samples=8)
    _, bb, z, _, _ = BL.solve_special_case_batch(exp_scenario, exp_scenario.absorption, d)
    sums = np.abs(bb.sum(axis=1) - spec.b_tot) / spec.b_tot
    zb = float(np.max(np.abs(xi.b_from_z(z) - bb)))
    report(9, rt <= 1e-12 and float(sums.max()) <= 1e-6,
           f"b-z round trip max rel {rt:.2e} (<= 1e-12); back-substituted sum max rel {sums.max():.2e} "
           f"(<= 1e-6); emitted b vs b(z) {zb:.2e} Hz")


def _csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_10_determinism(fig4_run, fig5_runs, fig6_run, tmp_path):
    same = {}
    E.run(E.ExperimentConfig("fig4", 7, "desk", {}, tmp_path / "fig4"))
    same["fig4"] = _csv_bytes(tmp_path / "fig4") == _csv_bytes(fig4_run[0])
    E.run(E.ExperimentConfig("fig5", 7, "desk", {}, tmp_path / "fig5"))
    same["fig5"] = _csv_bytes(tmp_path / "fig5") == _csv_bytes(fig5_runs[7])
    # the sweep is four trainings; rerun it twice at a reduced iteration count
    small = {"n_iterations": 40}
    E.run(E.ExperimentConfig("fig6", 7, "desk", small, tmp_path / "fig6a"))
    E.run(E.ExperimentConfig("fig6", 7, "desk", small, tmp_path / "fig6b"))
    same["fig6"] = _csv_bytes(tmp_path / "fig6a") == _csv_bytes(tmp_path / "fig6b")
    n_files = len(_csv_bytes(fig4_run[0])) + len(_csv_bytes(fig5_runs[7])) + len(_csv_bytes(tmp_path / "fig6a"))
    report(10, all(same.values()),
           f"byte-identical CSVs on rerun: {same} ({n_files} files compared)")

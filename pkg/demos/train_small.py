"""Train the allocation network on a small batch and follow the primal-dual iterations.

Run with ``python demos/train_small.py``; it takes a few seconds.
"""
from thzlab import experiments as E
from thzlab import trainer as T

config = E.ExperimentConfig("fig4", seed=7, overrides={"n_t": 20, "n_iterations": 120})
setup = E.build_setup(config.values(), config.seed)
net = E.make_network(setup, config.seed)
budget, spectrum = setup.scenario.budget, setup.scenario.spectrum


def show(rec):
    if rec.iteration % 20 == 0 or rec.iteration == 1:
        print(f"it {rec.iteration:4d}  J {rec.loss_j:9.3f}  mean R_AG {rec.mean_r_ag / 1e9:7.2f} Gbit/s  "
              f"power res {rec.power_residual / budget.p_tot:+.3%}  "
              f"bandwidth res {rec.bandwidth_residual / spectrum.b_tot:+.3%}")


state, history = T.train(setup.batch, setup.scenario, net, setup.hyper, setup.quad, callback=show)
r_convex, _ = E.convex_batch(setup)
print(f"convex baseline on the same batch: {r_convex / 1e9:.2f} Gbit/s")
print(f"learned / convex after {len(history)} iterations: {history[-1].mean_r_ag / r_convex:.4f}")
if "init_fallback" in state.metadata:
    print("the network was re-initialised:", state.metadata["init_fallback"])

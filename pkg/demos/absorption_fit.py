"""Synthesise two absorption windows and see how well one exponential describes each.

Run with ``python demos/absorption_fit.py``.
"""
import numpy as np

from thzlab import absorption as A

F_LO = 752e9
F_HI = F_LO + 50e9

for profile in A.Profile:
    table = A.synthesize_nacsr((F_LO, F_HI), profile, seed=7)
    model, err = A.fit_exponential(table, F_LO, F_HI)
    print(f"{profile.value:>20}: eta = ({model.eta1:.3f}, {model.eta2:.3e}, {model.eta3:.4f}), "
          f"max relative error {err:.1%}")
    probe = np.linspace(F_LO, F_HI, 6)
    k_true = A.TableAbsorption(table)(probe)
    for f, kt, kf in zip(probe, k_true, model(probe)):
        print(f"    {f / 1e9:7.1f} GHz   table {kt:.4f} /m   fit {kf:.4f} /m")

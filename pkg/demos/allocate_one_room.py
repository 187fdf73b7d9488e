"""Compare equal sub-band bandwidths with the joint convex allocation for one user drop.

Run with ``python demos/allocate_one_room.py``.
"""
import numpy as np

from thzlab import absorption as A
from thzlab import baseline as BL
from thzlab import rate as R
from thzlab import scenario as S

geometry, budget, spectrum = S.table1_defaults()
table = A.synthesize_nacsr((spectrum.epsilon_f, spectrum.f_hi), A.Profile.SMOOTH_EXPONENTIAL, seed=3)
fit, err = A.fit_exponential(table, spectrum.epsilon_f, spectrum.epsilon_f + spectrum.b_tot)
d = S.sample_distances(geometry, spectrum.n_s, seed=11)
scenario = S.Scenario(d, geometry, budget, spectrum, A.TableAbsorption(table))
quad = R.QuadratureSpec()
print(f"exponential fit of the window: max relative error {err:.2%}")

esb = BL.solve_esb(scenario, quad)
joint = BL.solve_special_case(scenario, fit, quad=quad)

print(f"{'user':>4} {'d [m]':>7} {'ESB p [mW]':>11} {'joint p [mW]':>13} {'joint b [GHz]':>14}")
for i in range(spectrum.n_s):
    print(f"{i:4d} {d[i]:7.2f} {1e3 * esb.p[i]:11.4f} {1e3 * joint.p[i]:13.4f} {joint.b[i] / 1e9:14.3f}")
print(f"aggregate rate, equal bandwidths: {esb.rate.r_ag / 1e9:.2f} Gbit/s")
print(f"aggregate rate, joint allocation: {joint.rate.r_ag / 1e9:.2f} Gbit/s")
print(f"KKT residuals (scaled): ESB {esb.kkt.max_scaled_residual():.1e}, "
      f"joint {joint.kkt.max_scaled_residual():.1e}")
print(f"sum of joint bandwidths: {joint.b.sum() / 1e9:.6f} GHz of {spectrum.b_tot / 1e9:g}")
assert np.all(joint.b <= spectrum.b_max)

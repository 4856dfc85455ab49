"""Far-field decay of an equilibrium correction and of the fold kernel.

Run with ``python3 demos/decay.py``.  Prints the binned envelope of the
crack-aware gradient at R = 64 and the fitted power law over [4, 32].
"""
import numpy as np

from crackbif import Model, build_domain
from crackbif.analysis import decay_profile
from crackbif.continuation import ContinuationConfig, equilibrate, refine_fold, run_path

R, k = 64.0, 0.455
domain = build_domain(R)
model = Model(domain)
u = equilibrate(model, k, np.zeros(domain.n_sites)).final_field

cfg = ContinuationConfig(R=R, k_start=k, k_window=(0.40, 0.50), max_folds=1)
res = run_path(model, cfg, u_start=u)
i, j = res.brackets[0]
fold = refine_fold(model, res.points[i], res.points[j])

for name, field in (("u", u), ("gamma", fold.gamma)):
    prof = decay_profile(domain, field, fit_range=(4, 32))
    print(f"|D~{name}|: slope {prof.fitted_slope:.3f}, prefactor {prof.prefactor:.3e}")
    for row in prof.rows():
        mark = "*" if row["in_fit"] else " "
        print(f"  {mark} r={row['r_mid']:7.2f}  envelope={row['envelope']:.3e}")

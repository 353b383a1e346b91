"""
How much calibration data is enough?
====================================

Coverage is guaranteed on average for any calibration size, but a single
calibration draw is noisy when it is small.
"""

# %%
from conformal_uq import OracleConfig, calibration_size_sweep, coverage_bound, generate

pool = generate(OracleConfig(7, 0.5, 0.5, seed=5), 3000)
sizes = [20, 50, 100, 250, 500, 1000]
points = calibration_size_sweep(pool, sizes, resamples=100, alpha=0.1, seed=1, n_test=1000,
                                jobs=4)

# %%
print(f"{'N':>5} {'mean':>7} {'std':>7}  band")
for p in points:
    b = coverage_bound(0.1, p.n_calib)
    print(f"{p.n_calib:5d} {p.mean:7.4f} {p.std:7.4f}  [{b.lower:.4f}, {b.upper:.4f}]")

# the 5% and 95% quantiles of single-draw coverage narrow as N grows
for p in points:
    lo, hi = sorted(p.coverages)[5], sorted(p.coverages)[94]
    print(f"N={p.n_calib:<5} 90% of draws in [{lo:.3f}, {hi:.3f}]")

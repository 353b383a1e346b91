"""
Split conformal coverage on a synthetic classifier
==================================================

Calibrate on 1000 labeled score vectors, then check how often the
prediction set contains the true label on fresh data.
"""

# %% a calibrated synthetic classifier with 7 classes
import numpy as np

from conformal_uq import OracleConfig, calibrate, coverage_bound, generate, predict_sets
from conformal_uq.evaluation import empirical_coverage

cfg = OracleConfig(k_classes=7, concentration=0.5, signal=0.5, seed=0)
data = generate(cfg, 3000)
cal = data.subset(np.arange(1000))
test = data.subset(np.arange(1000, 3000))
print("accuracy of the argmax:", np.mean(data.scores.argmax(axis=1) == data.labels))

# %% one calibration, one test split
alpha = 0.1
c = calibrate(cal, alpha)
sets = predict_sets(test.scores, c)
print(f"q_hat = {c.q_hat:.4f}, order statistic {c.rank} of {c.n_calib} calibration scores")
print("coverage on this split:", empirical_coverage(sets, test.labels))
print("first five sets:", [s.members for s in sets[:5]])

# %% the guarantee is about the average over calibration draws
covs = []
for seed in range(100):
    d = generate(OracleConfig(7, 0.5, 0.5, seed=seed + 1), 3000)
    c = calibrate(d.subset(np.arange(1000)), alpha)
    t = d.subset(np.arange(1000, 3000))
    covs.append(empirical_coverage(predict_sets(t.scores, c), t.labels))

b = coverage_bound(alpha, 1000)
print(f"mean coverage over 100 draws: {np.mean(covs):.4f}")
print(f"theoretical band: [{b.lower:.4f}, {b.upper:.4f}]")
print(f"spread of single draws: {np.min(covs):.3f} .. {np.max(covs):.3f}")

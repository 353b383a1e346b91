"""
APS versus RAPS set sizes
=========================

RAPS adds a penalty for every rank past ``k_reg``, which trims the long
tail of large sets while keeping the same coverage target.
"""

# %%
import numpy as np

from conformal_uq import OracleConfig, ScoringConfig, calibrate, generate, set_sizes
from conformal_uq.evaluation import coverage_from_sizes, set_size_stats
from conformal_uq.conformal import label_ranks
from conformal_uq.scores import predicted_labels

d = generate(OracleConfig(7, 0.5, 0.5, seed=3), 3000)
cal, test = d.subset(np.arange(1000)), d.subset(np.arange(1000, 3000))
pred = predicted_labels(test.scores)
ranks = label_ranks(test.scores, test.labels)

# %% same data, two scoring rules
for name, config in [("APS", ScoringConfig.aps()), ("RAPS", ScoringConfig.raps(0.1, 2))]:
    sizes = set_sizes(test.scores, calibrate(cal, 0.1, config))
    s = set_size_stats(sizes, pred, test.labels)
    print(f"{name:4s}  C_correct={s.c_correct:.2f}  C_wrong={s.c_wrong:.2f}  "
          f"C_average={s.c_average:.2f}  coverage={coverage_from_sizes(sizes, ranks):.3f}")
    print("      size counts 0..7:", np.bincount(sizes, minlength=8).tolist())

# %% a larger penalty shrinks sets further
for lam in (0.0, 0.01, 0.1, 0.5, 1.0):
    sizes = set_sizes(test.scores, calibrate(cal, 0.1, ScoringConfig.raps(lam, 2)))
    print(f"lambda={lam:<5} mean size {sizes.mean():.3f}  "
          f"coverage {coverage_from_sizes(sizes, ranks):.3f}")

"""
Sweeping the error rate
=======================

As alpha grows the threshold drops: sets shrink, singletons become
"certain" predictions, and at alpha = 1 every set is empty.
"""

# %%
import numpy as np

from conformal_uq import OracleConfig, alpha_sweep, generate

d = generate(OracleConfig(7, 0.5, 0.5, seed=4), 3000)
cal, test = d.subset(np.arange(1000)), d.subset(np.arange(1000, 3000))

alphas = np.round(np.arange(1, 21) * 0.05, 2)
print(f"{'alpha':>6} {'certain':>8} {'uncertain':>10} {'empty':>6} {'coverage':>9}")
for p in alpha_sweep(cal, test, alphas):
    bar = "#" * (p.empty // 50)
    print(f"{p.alpha:6.2f} {p.certain:8d} {p.uncertain:10d} {p.empty:6d} {p.coverage:9.3f}  {bar}")

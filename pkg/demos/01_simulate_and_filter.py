"""Simulate a small metapopulation outbreak and compare likelihood filters.

Five synthetic cities are linked by gravity-adjusted travel. We simulate one
epidemic, then estimate its log-likelihood with the particle filter (PF),
the block particle filter (BPF) and the ensemble Kalman filter (EnKF).

    python demos/01_simulate_and_filter.py
"""

from dataclasses import replace

import numpy as np

from metapop import compare_filters, make_synthetic, percentile_summary, simulate
from metapop.seair import PRESETS

params = replace(PRESETS["constrained"], E0=200.0)
syn = make_synthetic(5, n_days=20, seed=0, params=params)

print("cities:", ", ".join(syn.geo.names))
print("reported cases on the last five days:")
for name, row in zip(syn.geo.names, syn.panel.counts[:, -5:]):
    print(f"  {name}: {row.astype(int).tolist()}")

# Pointwise 10/50/90% bands from repeated simulation at the same parameters.
sims = simulate(syn.model, syn.params, syn.panel.grid, n_reps=50, seed=1)
bands = percentile_summary([s.observations for s in sims], (0.1, 0.5, 0.9))
print("\nday-20 simulated quantiles (10%, 50%, 90%):")
for name, q in zip(syn.geo.names, bands[:, -1]):
    print(f"  {name}: {np.round(q).astype(int).tolist()}")

# Each filter is run five times; the spread across runs gives a Monte Carlo SE.
rows = compare_filters(syn.model, syn.params, syn.panel, [("pf", 1000), ("bpf", 1000), ("enkf", 1000)],
                       seed=2, n_reps=5)
print("\nfilter   loglik      se")
for r in rows:
    print(f"{r['filter']:<6} {r['loglik']:9.1f} {r['se']:7.2f}")
print("\nThe EnKF treats counts as Gaussian and falls well below the particle methods.")
print("Already at five cities the PF varies far more between runs than the BPF, and its")
print("log-likelihood estimate is pulled down by that variance; more cities widen the gap.")

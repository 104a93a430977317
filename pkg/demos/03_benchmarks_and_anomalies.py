"""Judge a mechanistic fit against negative binomial benchmarks.

Benchmarks say how much likelihood a simple statistical model earns on the
same data. Per-observation differences (anomalies) then point at the city
days the mechanistic model explains worst.

    python demos/03_benchmarks_and_anomalies.py
"""

from dataclasses import replace

from metapop import (
    anomalies,
    block_particle_filter,
    conditional_logliks,
    fit_ar,
    fit_iid,
    make_synthetic,
    top_outliers,
)
from metapop.seair import PRESETS

syn = make_synthetic(6, n_days=25, seed=4, params=replace(PRESETS["constrained"], E0=200.0))

iid, ar = fit_iid(syn.panel), fit_ar(syn.panel)
print(f"IID negative binomial: loglik {iid.loglik:8.1f}  df {iid.df}")
print(f"AR negative binomial:  loglik {ar.loglik:8.1f}  df {ar.df}  (phi = {ar.phi:.2f})")

# A deliberately wrong model: transmission before lockdown 40% too low.
wrong = syn.params.replace(beta_before=0.6 * syn.params["beta_before"])
for label, p in (("true parameters", syn.params), ("beta too low", wrong)):
    res = block_particle_filter(syn.model, p, syn.panel, 1000, seed=0)
    print(f"SEAIR, {label:<15}: loglik {res.loglik_total:8.1f}")

res = block_particle_filter(syn.model, wrong, syn.panel, 1000, seed=0)
anom = anomalies(res, conditional_logliks(ar, syn.panel), model_label="seair", benchmark_label="ar",
                 units=syn.geo.names)
print("\nworst five observations for the misspecified model (unit, day, anomaly):")
for unit, day, value in top_outliers(anom, 5):
    print(f"  {unit} day {day:>2}: {value:8.2f}")

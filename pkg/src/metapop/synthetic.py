"""Seeded synthetic metapopulations for demos, tests and the CLI's ``--units`` mode."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ObservationPanel, ParameterSet, RngStream, TimeGrid, simulate
from .mobility import GeoTable, GravityConfig, MobilityTensor, gravity_adjust
from .seair import PRESETS, SeairModel, SeairParams

__all__ = ["SyntheticSetup", "make_synthetic", "synthetic_geo"]

# The gravity term adds about F * mean-population travellers per pair per day,
# so F = 20 would move every resident dozens of times daily; this adds a few
# thousand per pair instead.
SYNTHETIC_GRAVITY = 1e-3


@dataclass(frozen=True, eq=False)
class SyntheticSetup:
    model: SeairModel
    params: ParameterSet
    panel: ObservationPanel
    geo: GeoTable
    mobility: MobilityTensor


def synthetic_geo(U: int, rng: np.random.Generator) -> GeoTable:
    """Units scattered over a 10 x 10 degree box with lognormal populations."""
    lat = 25.0 + 10.0 * rng.random(U)
    lon = 105.0 + 10.0 * rng.random(U)
    pop = np.round(np.exp(rng.normal(np.log(3e6), 0.6, U)))
    return GeoTable(tuple(f"city{u:03d}" for u in range(U)), lat, lon, np.maximum(pop, 1e4))


def _base_flows(geo: GeoTable, n_days: int, rng, top_k: int = 3) -> np.ndarray:
    """Sparse records: each unit sends to its ``top_k`` largest neighbours."""
    U = len(geo.names)
    flows = np.zeros((n_days, U, U))
    for u in range(U):
        others = [j for j in np.argsort(-geo.population) if j != u][:top_k]
        for j in others:
            level = 2e-3 * np.sqrt(geo.population[u] * geo.population[j])
            flows[:, u, j] = level * rng.uniform(0.8, 1.2, n_days)
    return flows


def make_synthetic(
    U: int,
    n_days: int = 30,
    seed: int = 0,
    params: SeairParams | ParameterSet | None = None,
    *,
    gravity: float = SYNTHETIC_GRAVITY,
    dt: float = 0.25,
) -> SyntheticSetup:
    """Random geography, gravity-adjusted mobility and one simulated panel."""
    if U < 1 or n_days < 1:
        raise ValueError("need at least one unit and one day")
    stream = RngStream(seed, ("synthetic",))
    rng = stream.for_step(0, 0, "geo")
    geo = synthetic_geo(U, rng)
    base = MobilityTensor(_base_flows(geo, n_days, rng))
    mob = gravity_adjust(base, geo, GravityConfig(gravity)) if U > 1 else base
    if params is None:
        params = PRESETS["unconstrained"]
    if isinstance(params, SeairParams):
        e0 = min(params.E0, 0.001 * geo.population[0])
        params = replace(params, E0=float(np.round(e0))).to_parameter_set()
    model = SeairModel(geo.population, mob, unit_names=geo.names)
    grid = TimeGrid.daily(n_days, dt=dt)
    sim = simulate(model, params, grid, n_reps=1, seed=seed)[0]
    panel = ObservationPanel(sim.observations.astype(float), grid, geo.names)
    return SyntheticSetup(model, params, panel, geo, mob)

"""Reading and writing the CSV inputs: case panels, populations, mobility and geography."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ObservationPanel, TimeGrid
from .mobility import GeoTable, MobilityTensor, connectivity_check, read_geo_csv, read_mobility_csv

__all__ = [
    "Dataset",
    "ingest",
    "read_cases_csv",
    "write_cases_csv",
    "read_population_csv",
    "write_population_csv",
    "write_geo_csv",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    panel: ObservationPanel
    populations: np.ndarray
    mobility: MobilityTensor | None
    geo: GeoTable | None
    dates: tuple[str, ...]
    report: list[dict] = field(default_factory=list)


def _require(path, reader, cols):
    missing = set(cols) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{Path(path).name}: missing columns {sorted(missing)}")


def read_cases_csv(path, units=None, dt_step: float = 0.25) -> tuple[ObservationPanel, tuple[str, ...]]:
    """Long-format ``date,unit,cases`` rows into a panel; an empty ``cases`` cell is missing.

    Dates are ISO-8601 and must be consecutive days; observation ``n`` sits
    at time ``n`` days after the day before the first date.
    """
    name = Path(path).name
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require(path, reader, ("date", "unit", "cases"))
        recs = list(reader)
    if not recs:
        raise ValueError(f"{name}: no rows")
    seen = set()
    dups = set()
    for r in recs:
        key = (r["date"], r["unit"])
        if key in seen:
            dups.add(key)
        seen.add(key)
    if dups:
        raise ValueError(f"{name}: duplicated (date, unit) rows {sorted(dups)[:5]}")
    days = sorted({dt.date.fromisoformat(r["date"]) for r in recs})
    span = (days[-1] - days[0]).days + 1
    dates = tuple((days[0] + dt.timedelta(d)).isoformat() for d in range(span))
    if units is None:
        units = tuple(dict.fromkeys(r["unit"] for r in recs))
    index = {u: k for k, u in enumerate(units)}
    unknown = sorted({r["unit"] for r in recs} - set(index))
    if unknown:
        raise ValueError(f"{name}: unknown units {unknown}")
    col = {d: n for n, d in enumerate(dates)}
    counts = np.full((len(units), span), np.nan)
    for r in recs:
        raw = r["cases"].strip()
        if raw == "" or raw.upper() == "NA":
            continue
        v = float(raw)
        if v < 0:
            raise ValueError(f"{name}: negative count for {r['unit']} on {r['date']}")
        counts[index[r["unit"]], col[dt.date.fromisoformat(r["date"]).isoformat()]] = v
    grid = TimeGrid.daily(span, dt=dt_step)
    return ObservationPanel(counts, grid, tuple(units)), dates


def write_cases_csv(path, panel: ObservationPanel, dates) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "unit", "cases"])
        for n, d in enumerate(dates):
            for u, name in enumerate(panel.units):
                v = panel.counts[u, n]
                w.writerow([d, name, "" if np.isnan(v) else repr(float(v))])


def read_population_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    name = Path(path).name
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require(path, reader, ("unit", "population"))
        recs = list(reader)
    units = [r["unit"] for r in recs]
    dup = sorted({u for u in units if units.count(u) > 1})
    if dup:
        raise ValueError(f"{name}: duplicated units {dup}")
    pop = np.array([float(r["population"]) for r in recs])
    if np.any(pop <= 0) or np.any(pop != np.round(pop)):
        raise ValueError(f"{name}: populations must be positive integers")
    return tuple(units), pop.astype(np.int64)


def write_population_csv(path, units, populations) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "population"])
        for u, p in zip(units, populations):
            w.writerow([u, int(p)])


def write_geo_csv(path, geo: GeoTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "lat", "lon", "population"])
        for k, u in enumerate(geo.names):
            w.writerow([u, repr(float(geo.lat[k])), repr(float(geo.lon[k])), repr(float(geo.population[k]))])


def ingest(cases, population=None, mobility=None, geo=None, *, dt_step: float = 0.25) -> Dataset:
    """Load and cross-check the input files.

    Unit order follows the population file (or the geo file when no
    population file is given). Every unit named anywhere must appear there.
    """
    geo_t = read_geo_csv(geo) if geo else None
    if population:
        units, pops = read_population_csv(population)
    elif geo_t is not None:
        units, pops = geo_t.names, np.round(geo_t.population).astype(np.int64)
    else:
        raise ValueError("need a population or geo file")
    if geo_t is not None:
        extra = sorted(set(geo_t.names) ^ set(units))
        if extra:
            raise ValueError(f"geo and population files disagree on units {extra}")
        order = [geo_t.names.index(u) for u in units]
        geo_t = GeoTable(units, geo_t.lat[order], geo_t.lon[order], geo_t.population[order])
    panel, dates = read_cases_csv(cases, units, dt_step)
    mob = read_mobility_csv(mobility, units, panel.n_times) if mobility else None
    report = connectivity_check(mob, list(units)) if mob is not None else []
    return Dataset(panel, pops, mob, geo_t, dates, report)

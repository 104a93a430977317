"""Day-indexed inter-unit movement: interpolation, gravity adjustment, diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MobilityTensor",
    "GeoTable",
    "GravityConfig",
    "interpolate_missing_flows",
    "gravity_adjust",
    "gravity_flow",
    "connectivity_check",
    "great_circle_distance",
    "read_mobility_csv",
    "write_mobility_csv",
    "read_geo_csv",
]

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True, eq=False)
class MobilityTensor:
    """Travel rates ``flows[day, from, to]`` in persons/day, piecewise constant per day.

    Stored dense: after gravity adjustment every off-diagonal pair carries
    flow, so sparsity buys nothing.
    """

    flows: np.ndarray

    def __post_init__(self):
        f = np.array(self.flows, dtype=float)
        if f.ndim != 3 or f.shape[1] != f.shape[2]:
            raise ValueError("flows must have shape (days, U, U)")
        if np.any(f < 0):
            raise ValueError("flows must be non-negative")
        idx = np.arange(f.shape[1])
        f[:, idx, idx] = 0.0
        f.setflags(write=False)
        object.__setattr__(self, "flows", f)

    @property
    def n_days(self) -> int:
        return self.flows.shape[0]

    @property
    def n_units(self) -> int:
        return self.flows.shape[1]


@dataclass(frozen=True)
class GeoTable:
    names: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    population: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lat, dtype=float)
        lon = np.asarray(self.lon, dtype=float)
        pop = np.asarray(self.population, dtype=float)
        if not (lat.shape == lon.shape == pop.shape == (len(self.names),)):
            raise ValueError("lat, lon and population need one entry per unit")
        if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
            raise ValueError("coordinates out of range")
        if np.any(pop <= 0):
            raise ValueError("populations must be positive")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "population", pop)


@dataclass(frozen=True)
class GravityConfig:
    F: float = 20.0

    def __post_init__(self):
        if self.F < 0:
            raise ValueError("gravity factor F must be non-negative")


def great_circle_distance(a, b) -> np.ndarray:
    """Haversine distance in km between ``(lat, lon)`` points given in degrees."""
    lat1, lon1 = np.radians(np.asarray(a, float)).T
    lat2, lon2 = np.radians(np.asarray(b, float)).T
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def distance_matrix(geo: GeoTable) -> np.ndarray:
    pts = np.column_stack([geo.lat, geo.lon])
    return great_circle_distance(pts[:, None, :], pts[None, :, :])


def interpolate_missing_flows(partial) -> MobilityTensor:
    """Fill NaN days per (from, to) pair by linear interpolation in time.

    Ends are extended with the nearest observed value; pairs never observed
    get zero flow.
    """
    f = np.array(partial, dtype=float)
    days = np.arange(f.shape[0])
    out = np.zeros_like(f)
    observed = ~np.isnan(f)
    for u, j in zip(*np.nonzero(observed.any(axis=0))):
        seen = observed[:, u, j]
        out[:, u, j] = np.interp(days, days[seen], f[seen, u, j])
    return MobilityTensor(out)


def gravity_flow(F, d_uj, d_bar, p_u, p_j, p_bar):
    """Extra travel ``(F d_bar / p_bar) p_u p_j / d_uj`` between two units."""
    return F * d_bar / p_bar * p_u * p_j / d_uj


def gravity_adjust(base: MobilityTensor, geo: GeoTable, cfg: GravityConfig = GravityConfig()) -> MobilityTensor:
    """Add ``(F dbar / Pbar) P_u P_j / d_uj`` to every off-diagonal flow on every day."""
    U = base.n_units
    if len(geo.names) != U:
        raise ValueError("geo table and mobility tensor disagree on the number of units")
    if cfg.F == 0:
        return MobilityTensor(base.flows)
    d = distance_matrix(geo)
    iu, ju = np.triu_indices(U, k=1)
    zero = d[iu, ju] == 0
    if np.any(zero):
        k = int(np.argmax(zero))
        raise ValueError(f"units {geo.names[iu[k]]!r} and {geo.names[ju[k]]!r} have coincident coordinates")
    d_bar = d[iu, ju].mean()
    p = geo.population
    with np.errstate(divide="ignore"):
        extra = gravity_flow(cfg.F, d, d_bar, p[:, None], p[None, :], p.mean())
    np.fill_diagonal(extra, 0.0)
    return MobilityTensor(base.flows + extra[None])


def connectivity_check(tensor: MobilityTensor, names=None) -> list[dict]:
    """Per-unit total in/out travel summed over days, flagging units nobody enters."""
    total_in = tensor.flows.sum(axis=(0, 1))
    total_out = tensor.flows.sum(axis=(0, 2))
    names = names or [f"u{u}" for u in range(tensor.n_units)]
    return [
        {"unit": names[u], "total_in": float(total_in[u]), "total_out": float(total_out[u]),
         "isolated": bool(total_in[u] == 0)}
        for u in range(tensor.n_units)
    ]


# --- CSV ------------------------------------------------------------------------------

def read_mobility_csv(path, units, n_days: int | None = None) -> MobilityTensor:
    """Read ``day,from,to,flow`` rows (0-based day); gaps are interpolated."""
    index = {name: k for k, name in enumerate(units)}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"day", "from", "to", "flow"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            rows.append((int(rec["day"]), rec["from"], rec["to"], float(rec["flow"])))
    unknown = sorted({r[1] for r in rows if r[1] not in index} | {r[2] for r in rows if r[2] not in index})
    if unknown:
        raise ValueError(f"{path}: unknown units {unknown}")
    days = max([r[0] for r in rows], default=0) + 1
    days = max(days, n_days or 0)
    f = np.full((days, len(units), len(units)), np.nan)
    for day, a, b, flow in rows:
        if flow < 0:
            raise ValueError(f"{path}: negative flow on day {day} from {a} to {b}")
        f[day, index[a], index[b]] = flow
    return interpolate_missing_flows(f)


def write_mobility_csv(path, tensor: MobilityTensor, units) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "from", "to", "flow"])
        for day, a, b in zip(*np.nonzero(tensor.flows)):
            w.writerow([day, units[a], units[b], repr(float(tensor.flows[day, a, b]))])


def read_geo_csv(path) -> GeoTable:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    names = [r["unit"] for r in recs]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ValueError(f"{Path(path).name}: duplicated units {dup}")
    return GeoTable(
        tuple(names),
        np.array([float(r["lat"]) for r in recs]),
        np.array([float(r["lon"]) for r in recs]),
        np.array([float(r["population"]) for r in recs]),
    )

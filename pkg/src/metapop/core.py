"""Model-agnostic containers for spatiotemporal POMP models.

Holds the time grid, unit graph, parameter sets with estimation-scale
transforms, observation panels, keyed random streams, and the model
contract that filters and simulators program against.

Ensembles are arrays of shape ``(J, U, K)``: particles by units by
compartments. Model methods operate on a whole ensemble at once.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "UnitGraph",
    "ParameterSet",
    "ObservationPanel",
    "RngStream",
    "SpatPompModel",
    "DomainError",
    "simulate",
    "percentile_summary",
    "parallel_map",
    "worker_count",
]

THREADS_ENV = "METAPOP_THREADS"


class DomainError(ValueError):
    """A parameter value lies outside the domain of its transform."""


@dataclass(frozen=True)
class TimeGrid:
    """Observation times ``t_1 < ... < t_N`` after an initial time ``t0``.

    ``dt`` is the Euler sub-step; each gap between consecutive times must
    be an integer multiple of it.
    """

    t0: float
    obs_times: tuple[float, ...]
    dt: float = 0.25

    def __post_init__(self):
        times = tuple(float(t) for t in self.obs_times)
        object.__setattr__(self, "obs_times", times)
        if len(times) == 0:
            raise ValueError("obs_times must be non-empty")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        edges = np.concatenate([[self.t0], times])
        gaps = np.diff(edges)
        if np.any(gaps <= 0):
            raise ValueError("observation times must be strictly increasing and after t0")
        ratio = gaps / self.dt
        if np.any(np.abs(ratio - np.round(ratio)) > 1e-9):
            raise ValueError("each observation interval must be an integer multiple of dt")

    @property
    def n_times(self) -> int:
        return len(self.obs_times)

    def interval(self, n: int) -> tuple[float, float]:
        """Return ``(t_{n-1}, t_n)`` for 0-based index ``n``."""
        start = self.t0 if n == 0 else self.obs_times[n - 1]
        return start, self.obs_times[n]

    @classmethod
    def daily(cls, n_days: int, t0: float = 0.0, dt: float = 0.25) -> "TimeGrid":
        return cls(t0, tuple(t0 + np.arange(1, n_days + 1, dtype=float)), dt)


@dataclass(frozen=True)
class UnitGraph:
    names: tuple[str, ...]
    block_partition: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 1:
            raise ValueError("need at least one unit")
        blocks = self.block_partition or tuple((u,) for u in range(len(self.names)))
        blocks = tuple(tuple(int(u) for u in b) for b in blocks)
        check_partition(blocks, len(self.names))
        object.__setattr__(self, "block_partition", blocks)

    @property
    def n_units(self) -> int:
        return len(self.names)


def check_partition(blocks: Sequence[Sequence[int]], n_units: int) -> None:
    """Raise unless ``blocks`` are disjoint, non-empty and cover ``range(n_units)``."""
    seen: list[int] = []
    for b in blocks:
        if len(b) == 0:
            raise ValueError("empty block in partition")
        seen.extend(b)
    if sorted(seen) != list(range(n_units)):
        raise ValueError(f"blocks must partition units 0..{n_units - 1} exactly")


# --- parameter transforms ---------------------------------------------------

def _to_est(kind: str, name: str, x: float) -> float:
    if kind == "identity":
        return float(x)
    if kind == "log":
        if not x > 0:
            raise DomainError(f"{name}={x} must be > 0 for a log transform")
        return float(np.log(x))
    if kind == "log1p":
        if not x > -1:
            raise DomainError(f"{name}={x} must be > -1 for a log1p transform")
        return float(np.log1p(x))
    if kind == "logit":
        if not 0 <= x <= 1:
            raise DomainError(f"{name}={x} must lie in [0, 1] for a logit transform")
        with np.errstate(divide="ignore"):
            return float(np.log(x) - np.log1p(-x))
    raise ValueError(f"unknown transform {kind!r} for {name}")


def _from_est(kind: str, z):
    z = np.asarray(z, dtype=float)
    if kind == "identity":
        return z
    if kind == "log":
        return np.exp(z)
    if kind == "log1p":
        return np.expm1(z)
    if kind == "logit":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown transform {kind!r}")


def to_est_array(kind: str, x):
    """Vectorized forward transform without domain checks."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if kind == "identity":
            return x
        if kind == "log":
            return np.log(x)
        if kind == "log1p":
            return np.log1p(x)
        if kind == "logit":
            return np.log(x) - np.log1p(-x)
    raise ValueError(f"unknown transform {kind!r}")


from_est_array = _from_est


@dataclass(frozen=True)
class ParameterSet:
    """Named scalar parameters with transforms and a fixed mask.

    Parameter order is the insertion order of ``values``.
    """

    values: Mapping[str, float]
    transforms: Mapping[str, str] = field(default_factory=dict)
    fixed: frozenset[str] = frozenset()

    def __post_init__(self):
        values = {k: float(v) for k, v in self.values.items()}
        transforms = {k: self.transforms.get(k, "identity") for k in values}
        extra = set(self.transforms) - set(values)
        if extra:
            raise ValueError(f"transforms given for unknown parameters: {sorted(extra)}")
        unknown = set(self.fixed) - set(values)
        if unknown:
            raise ValueError(f"fixed names not in parameter set: {sorted(unknown)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        for k, v in values.items():
            _to_est(transforms[k], k, v)

    @property
    def names(self) -> list[str]:
        return list(self.values)

    @property
    def free_names(self) -> list[str]:
        return [k for k in self.values if k not in self.fixed]

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def replace(self, **updates: float) -> "ParameterSet":
        unknown = set(updates) - set(self.values)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        return ParameterSet({**self.values, **updates}, self.transforms, self.fixed)

    def with_fixed(self, names: Iterable[str]) -> "ParameterSet":
        return ParameterSet(self.values, self.transforms, self.fixed | set(names))

    def to_estimation_scale(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        return np.array([_to_est(self.transforms[k], k, self.values[k]) for k in names])

    def from_estimation_scale(self, z, names: Sequence[str] | None = None) -> "ParameterSet":
        """Inverse of :meth:`to_estimation_scale`, replacing ``names`` only."""
        names = self.names if names is None else list(names)
        z = np.asarray(z, dtype=float)
        if z.shape != (len(names),):
            raise ValueError(f"expected {len(names)} values, got shape {z.shape}")
        new = {k: float(_from_est(self.transforms[k], zi)) for k, zi in zip(names, z)}
        return self.replace(**new)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v) for k, v in self.values.items()}


def to_estimation_scale(params: ParameterSet) -> np.ndarray:
    return params.to_estimation_scale()


def from_estimation_scale(params: ParameterSet, z) -> ParameterSet:
    return params.from_estimation_scale(z)


@dataclass(frozen=True, eq=False)
class ObservationPanel:
    """``U x N`` counts (NaN marks a missing value) on a time grid."""

    counts: np.ndarray
    grid: TimeGrid
    units: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.ndim != 2:
            raise ValueError("counts must be a U x N matrix")
        if counts.shape[1] != self.grid.n_times:
            raise ValueError(
                f"counts have {counts.shape[1]} columns but the grid has {self.grid.n_times} times"
            )
        if np.any(counts[~np.isnan(counts)] < 0):
            raise ValueError("observed counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        units = tuple(self.units) or tuple(f"u{u}" for u in range(counts.shape[0]))
        if len(units) != counts.shape[0]:
            raise ValueError("one unit name per row required")
        object.__setattr__(self, "units", units)

    @property
    def n_units(self) -> int:
        return self.counts.shape[0]

    @property
    def n_times(self) -> int:
        return self.counts.shape[1]


# --- random streams ------------------------------------------------------------

def _tag_int(tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode())
    return int(tag)


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream keyed by ``(seed, replicate, particle, time, purpose)``.

    Backed by Philox, so any key maps to an independent generator without
    reference to execution order.
    """

    master_seed: int
    stream_key: tuple = ()

    def child(self, *key) -> "RngStream":
        return RngStream(self.master_seed, self.stream_key + tuple(key))

    def generator(self) -> np.random.Generator:
        spawn = tuple(_tag_int(k) & 0xFFFFFFFF for k in self.stream_key)
        seq = np.random.SeedSequence(int(self.master_seed) & (2**64 - 1), spawn_key=spawn)
        return np.random.Generator(np.random.Philox(seq))

    def for_step(self, replicate: int, time_index: int, purpose: str, particle: int = 0):
        """Generator for one (replicate, particle, time, purpose) cell."""
        return self.child(replicate, particle, time_index, purpose).generator()


# --- model contract ------------------------------------------------------------

class SpatPompModel:
    """Contract for metapopulation models used by the simulators and filters.

    ``params`` passed to the methods is a mapping from name to a value
    broadcastable against ``(J, U)`` so that each particle, and each unit
    within a particle, may carry its own copy.
    """

    unit_names: tuple[str, ...] = ()
    compartments: tuple[str, ...] = ()
    #: states are counts; the EnKF clips its updated ensemble at zero
    nonnegative: bool = True

    @property
    def n_units(self) -> int:
        return len(self.unit_names)

    def rinit(self, params, n_particles: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def rprocess(self, x, t_start, t_end, dt, params, rng) -> np.ndarray:
        """Advance ensemble ``x`` from ``t_start`` to ``t_end``; return a new array."""
        raise NotImplementedError

    def dmeasure(self, y, x, t, params) -> np.ndarray:
        """Per-unit log-densities, shape ``(J, U)``; missing ``y`` gives 0."""
        raise NotImplementedError

    def rmeasure(self, x, t, params, rng) -> np.ndarray:
        raise NotImplementedError

    def emeasure(self, x, t, params) -> np.ndarray:
        raise NotImplementedError

    def vmeasure(self, x, t, params) -> np.ndarray:
        raise NotImplementedError

    def param_units(self, name: str) -> Sequence[int] | None:
        """Units whose local copy of ``name`` affects the model; ``None`` for all."""
        return None

    def ivp_names(self) -> frozenset[str]:
        """Parameters that act only through ``rinit``."""
        return frozenset()

    def dmeasure_unit(self, y, x, u, t, params):
        return self.dmeasure(_unit_row(y, u, self.n_units), x, t, params)[:, u]

    def emeasure_unit(self, x, u, params, t=None):
        return self.emeasure(x, t, params)[:, u]

    def vmeasure_unit(self, x, u, params, t=None):
        return self.vmeasure(x, t, params)[:, u]


def _unit_row(y, u, n_units):
    row = np.full(n_units, np.nan)
    row[u] = y
    return row


def param_arrays(params) -> dict[str, np.ndarray]:
    if isinstance(params, ParameterSet):
        return params.as_arrays()
    return {k: np.asarray(v, dtype=float) for k, v in params.items()}


# --- parallel helpers ------------------------------------------------------------

def worker_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """Order-preserving map; results never depend on the worker count."""
    n = worker_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- simulation --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Simulation:
    """One replicate: states at ``t0`` and every observation time, plus observations."""

    states: np.ndarray  # (N + 1, U, K)
    observations: np.ndarray  # (U, N)
    grid: TimeGrid


def simulate(
    model: SpatPompModel,
    params,
    grid: TimeGrid,
    n_reps: int = 1,
    seed: int = 0,
    threads: int | None = None,
) -> list[Simulation]:
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    p = param_arrays(params)
    root = RngStream(seed, ("simulate",))

    def one(rep: int) -> Simulation:
        x = model.rinit(p, 1, root.for_step(rep, 0, "init"))
        states = [x[0]]
        obs = []
        for n in range(grid.n_times):
            t_start, t_end = grid.interval(n)
            x = model.rprocess(x, t_start, t_end, grid.dt, p, root.for_step(rep, n + 1, "process"))
            states.append(x[0])
            obs.append(model.rmeasure(x, t_end, p, root.for_step(rep, n + 1, "measure"))[0])
        return Simulation(np.stack(states), np.stack(obs, axis=1), grid)

    return parallel_map(one, list(range(n_reps)), threads)


def percentile_summary(simulations: Sequence, probs: Sequence[float]) -> np.ndarray:
    """Pointwise quantiles of simulated observations, shape ``U x N x len(probs)``.

    Accepts :class:`Simulation` objects or bare ``U x N`` arrays.
    """
    if len(simulations) == 0:
        raise ValueError("no simulations supplied")
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("quantile levels must lie strictly between 0 and 1")
    arr = np.stack([np.asarray(getattr(s, "observations", s), dtype=float) for s in simulations])
    if arr.shape[0] < 2:
        raise ValueError("need at least two simulations")
    q = np.quantile(arr, probs, axis=0)
    return np.moveaxis(q, 0, -1)

"""Maximum likelihood by iterated block particle filtering.

Each outer iteration runs a block particle filter on an extended model in
which every particle carries a per-unit copy of the estimated parameters.
The copies take Gaussian random-walk steps on the estimation scale before
each observation and are resampled within blocks together with the latent
state, so selection favours values consistent with the local data. Shared
parameters are then reconciled by averaging the copies, and the random
walk is cooled geometrically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ParameterSet, RngStream, parallel_map
from .filters import _ParamSwarm, _run_blocks, block_particle_filter

__all__ = ["PerturbationSchedule", "ParamTrace", "ibpf", "replicated_search", "jitter"]

DEFAULT_COOLING = 0.5 ** (1 / 25)


@dataclass(frozen=True)
class PerturbationSchedule:
    """Random-walk sd per parameter (estimation scale) and geometric cooling.

    At iteration ``m = 1..M`` the sd is ``rw_sd * cooling_factor**m``.
    """

    rw_sd: Mapping[str, float]
    cooling_factor: float = DEFAULT_COOLING
    n_iterations: int = 50
    ivp_names: frozenset[str] = frozenset({"E0", "A0"})

    def __post_init__(self):
        if not 0 < self.cooling_factor <= 1:
            raise ValueError("cooling_factor must lie in (0, 1]")
        if any(v < 0 for v in self.rw_sd.values()):
            raise ValueError("random-walk sds must be non-negative")
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        object.__setattr__(self, "rw_sd", dict(self.rw_sd))
        object.__setattr__(self, "ivp_names", frozenset(self.ivp_names))

    @classmethod
    def default(cls, params: ParameterSet, *, regular: float = 0.02, ivp: float = 0.1,
                ivp_names=frozenset({"E0", "A0"}), **kw) -> "PerturbationSchedule":
        sd = {k: (ivp if k in ivp_names else regular) for k in params.free_names}
        return cls(sd, ivp_names=frozenset(ivp_names), **kw)

    def sd_at(self, m: int) -> dict[str, float]:
        return {k: v * self.cooling_factor**m for k, v in self.rw_sd.items()}


@dataclass
class ParamTrace:
    names: list[str]
    estimates: list[np.ndarray] = field(default_factory=list)
    logliks: list[float] = field(default_factory=list)
    status: str = "ok"

    def __len__(self):
        return len(self.logliks)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *self.names, "loglik"])
            for m, (est, ll) in enumerate(zip(self.estimates, self.logliks), start=1):
                w.writerow([m, *(repr(float(v)) for v in est), repr(float(ll))])


def ibpf(
    model,
    start: ParameterSet,
    data,
    J: int,
    blocks=None,
    schedule: PerturbationSchedule | None = None,
    seed: int = 0,
    *,
    replicate: int = 0,
) -> tuple[ParameterSet, ParamTrace]:
    """Iterated block particle filter; returns the final estimate and its trace.

    Fixed parameters and parameters with zero random-walk sd never move.
    A filter failure stops the iterations and is noted in ``trace.status``.
    """
    if schedule is None:
        schedule = PerturbationSchedule.default(start)
    if blocks is None:
        blocks = [(u,) for u in range(model.n_units)]
    unknown = set(schedule.rw_sd) - set(start.names)
    if unknown:
        raise KeyError(f"random-walk sd given for unknown parameters: {sorted(unknown)}")
    moving = [k for k in start.free_names if schedule.rw_sd.get(k, 0.0) > 0]
    trace = ParamTrace(list(start.names))
    current = start
    U = model.n_units
    for m in range(1, schedule.n_iterations + 1):
        if not moving:
            res = block_particle_filter(model, current, data, J, blocks, seed, replicate=_rep(replicate, m))
            trace.estimates.append(_natural(current))
            trace.logliks.append(res.loglik_total)
            continue
        sd = schedule.sd_at(m)
        swarm = _ParamSwarm(
            moving, current.transforms, current.to_estimation_scale(moving), J, U,
            [sd[k] for k in moving], schedule.ivp_names, RngStream(seed, ("ibpf",)), _rep(replicate, m),
        )
        res = _run_blocks(model, current, data, J, blocks, seed, replicate=_rep(replicate, m),
                          method="ibpf", swarm=swarm, keep_mean=False)
        if res.failures:
            b, n = res.failures[0]
            trace.status = f"aborted at iteration {m}: block {b} failed at time {n + 1}"
            break
        est = []
        for i, k in enumerate(moving):
            units = model.param_units(k)
            copies = swarm.est[:, :, i] if units is None else swarm.est[:, list(units), i]
            est.append(copies.mean())
        current = current.from_estimation_scale(np.array(est), moving)
        trace.estimates.append(_natural(current))
        trace.logliks.append(res.loglik_total)
    return current, trace


def _natural(params: ParameterSet) -> np.ndarray:
    return np.array([params[k] for k in params.names])


def _rep(replicate: int, m: int) -> int:
    return replicate * 100_003 + m


def jitter(params: ParameterSet, sd: float | Mapping[str, float], rng: np.random.Generator) -> ParameterSet:
    """Random start: Gaussian noise on the estimation scale of each free parameter."""
    names = params.free_names
    if not names:
        return params
    sds = np.array([sd.get(k, 0.0) if isinstance(sd, Mapping) else sd for k in names], float)
    z = params.to_estimation_scale(names)
    z = z + np.where(np.isfinite(z), rng.standard_normal(z.size) * sds, 0.0)
    return params.from_estimation_scale(z, names)


def replicated_search(
    model,
    starts: Sequence[ParameterSet],
    data,
    J: int,
    blocks=None,
    schedule: PerturbationSchedule | None = None,
    seed: int = 0,
    *,
    n_eval: int = 5,
    J_eval: int | None = None,
    threads: int | None = None,
) -> list[dict]:
    """Run :func:`ibpf` from each start, re-evaluate each end point, rank by mean loglik."""
    if len(starts) < 1:
        raise ValueError("need at least one start")
    J_eval = J_eval or J

    def one(k):
        try:
            est, trace = ibpf(model, starts[k], data, J, blocks, schedule, seed, replicate=k)
            ll = np.array([
                block_particle_filter(model, est, data, J_eval, blocks, seed, replicate=10_000 + 100 * k + r).loglik_total
                for r in range(n_eval)
            ])
            se = float(ll.std(ddof=1) / np.sqrt(n_eval)) if n_eval > 1 and np.all(np.isfinite(ll)) else float("nan")
            return {"start": k, "params": est, "loglik": float(ll.mean()), "se": se,
                    "logliks": ll.tolist(), "trace": trace, "error": ""}
        except Exception as exc:  # noqa: BLE001 - recorded per start
            return {"start": k, "params": None, "loglik": float("nan"), "se": float("nan"),
                    "logliks": [], "trace": None, "error": f"{type(exc).__name__}: {exc}"}

    rows = parallel_map(one, list(range(len(starts))), threads)
    return sorted(rows, key=lambda r: (-np.nan_to_num(r["loglik"], nan=-np.inf), r["start"]))


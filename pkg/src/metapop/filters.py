"""Likelihood evaluation by particle, block particle and ensemble Kalman filters."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import ObservationPanel, RngStream, SpatPompModel, check_partition, param_arrays, parallel_map
from .seair import enkf_variance_floor

__all__ = [
    "FilterResult",
    "particle_filter",
    "block_particle_filter",
    "enkf",
    "enkf_variance_floor",
    "compare_filters",
    "systematic_resample",
    "LOG_WEIGHT_FLOOR",
]

LOG_WEIGHT_FLOOR = -700.0


@dataclass(eq=False)
class FilterResult:
    """Output of a filter run.

    ``cond_loglik[b, n]`` is the conditional log-likelihood of block ``b`` at
    observation ``n``; the total is their sum.
    """

    cond_loglik: np.ndarray
    ess: np.ndarray
    blocks: tuple[tuple[int, ...], ...]
    seed: int
    method: str
    filter_mean: np.ndarray | None = None
    failures: list[tuple[int, int]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def loglik_total(self) -> float:
        return float(np.sum(self.cond_loglik))

    @property
    def loglik(self) -> float:
        return self.loglik_total

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "loglik_total": self.loglik_total,
            "seed": self.seed,
            "n_blocks": len(self.blocks),
            "n_times": int(self.cond_loglik.shape[1]),
            "failures": [list(f) for f in self.failures],
            "warnings": list(self.warnings),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "time", "cond_loglik"])
            B, N = self.cond_loglik.shape
            for b in range(B):
                for n in range(N):
                    w.writerow([b, n + 1, repr(float(self.cond_loglik[b, n]))])


def systematic_resample(weights: np.ndarray, u: float) -> np.ndarray:
    """Ancestor indices for normalized ``weights`` from a single uniform ``u``."""
    J = weights.size
    cs = np.cumsum(weights)
    cs[-1] = 1.0
    return np.searchsorted(cs, (u + np.arange(J)) / J, side="right").clip(max=J - 1)


class _ParamSwarm:
    """Per-particle, per-unit parameter copies on the estimation scale."""

    def __init__(self, names, transforms, start_est, J, U, sd, ivp, rng_stream, replicate):
        from .core import from_est_array

        self._from = from_est_array
        self.names = list(names)
        self.transforms = [transforms[k] for k in self.names]
        self.est = np.broadcast_to(np.asarray(start_est, float), (J, U, len(self.names))).copy()
        self.sd = np.asarray(sd, float)
        self.ivp = np.array([k in ivp for k in self.names])
        self.stream = rng_stream
        self.replicate = replicate

    def perturb(self, time_index: int) -> None:
        mask = self.ivp if time_index == 0 else ~self.ivp
        sd = np.where(mask, self.sd, 0.0)
        if np.any(sd > 0):
            rng = self.stream.for_step(self.replicate, time_index, "perturb")
            self.est = self.est + rng.standard_normal(self.est.shape) * sd

    def values(self) -> dict[str, np.ndarray]:
        return {k: self._from(tr, self.est[:, :, i]) for i, (k, tr) in enumerate(zip(self.names, self.transforms))}

    def resample(self, index: np.ndarray) -> None:
        U = self.est.shape[1]
        self.est = self.est[index, np.arange(U)[None, :]]


def _run_blocks(
    model: SpatPompModel,
    params,
    data: ObservationPanel,
    J: int,
    blocks,
    seed: int,
    *,
    replicate: int = 0,
    method: str = "bpf",
    swarm: _ParamSwarm | None = None,
    keep_mean: bool = True,
) -> FilterResult:
    if J < 2:
        raise ValueError("need at least two particles")
    U = model.n_units
    if data.n_units != U:
        raise ValueError(f"data has {data.n_units} units but the model has {U}")
    blocks = tuple(tuple(int(u) for u in b) for b in blocks)
    check_partition(blocks, U)
    grid = data.grid
    stream = RngStream(seed, ("filter",))
    fixed = param_arrays(params)

    def current():
        return fixed if swarm is None else {**fixed, **swarm.values()}

    if swarm is not None:
        swarm.perturb(0)
    x = model.rinit(current(), J, stream.for_step(replicate, 0, "init"))
    B, N = len(blocks), grid.n_times
    cond = np.zeros((B, N))
    ess = np.zeros((B, N))
    means = np.zeros((N, U, x.shape[2])) if keep_mean else None
    failures = []
    cols = np.arange(U)[None, :]
    for n in range(N):
        t_start, t_end = grid.interval(n)
        if swarm is not None:
            swarm.perturb(n + 1)
        p = current()
        x = model.rprocess(x, t_start, t_end, grid.dt, p, stream.for_step(replicate, n + 1, "process"))
        logw = model.dmeasure(data.counts[:, n], x, t_end, p)
        rng = stream.for_step(replicate, n + 1, "resample")
        index = np.empty((J, U), dtype=np.int64)
        for b, units in enumerate(blocks):
            lw = np.nan_to_num(logw[:, list(units)].sum(axis=1), nan=-np.inf)
            lw = np.maximum(lw, LOG_WEIGHT_FLOOR)
            u01 = rng.random()
            if np.all(lw <= LOG_WEIGHT_FLOOR):
                cond[b, n] = -np.inf
                ess[b, n] = 0.0
                failures.append((b, n))
                anc = np.arange(J)
            else:
                lse = logsumexp(lw)
                cond[b, n] = lse - np.log(J)
                w = np.exp(lw - lse)
                ess[b, n] = 1.0 / np.sum(w**2)
                anc = systematic_resample(w, u01)
            index[:, list(units)] = anc[:, None]
        x = x[index, cols]
        if swarm is not None:
            swarm.resample(index)
        if keep_mean:
            means[n] = x.mean(axis=0)
    return FilterResult(cond, ess, blocks, seed, method, means, failures)


def particle_filter(model, params, data, J: int, seed: int = 0, *, replicate: int = 0) -> FilterResult:
    """Bootstrap particle filter with systematic resampling; one block of all units."""
    blocks = (tuple(range(model.n_units)),)
    return _run_blocks(model, params, data, J, blocks, seed, replicate=replicate, method="pf")


def block_particle_filter(model, params, data, J: int, blocks=None, seed: int = 0, *, replicate: int = 0) -> FilterResult:
    """Block particle filter; each block's sub-state is resampled independently.

    ``blocks`` defaults to one unit per block.
    """
    if blocks is None:
        blocks = [(u,) for u in range(model.n_units)]
    return _run_blocks(model, params, data, J, blocks, seed, replicate=replicate, method="bpf")


def _mvn_logpdf(y, mean, cov):
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, y - mean)
    return -0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * y.size * np.log(2 * np.pi)


def enkf(model, params, data, J: int, seed: int = 0, *, replicate: int = 0) -> FilterResult:
    """Ensemble Kalman filter with perturbed observations.

    States are real-valued throughout. For count models (``model.nonnegative``)
    negative values produced by the linear update are clipped to zero before
    the next prediction.
    """
    if J < 2:
        raise ValueError("need at least two particles")
    p = param_arrays(params)
    grid = data.grid
    stream = RngStream(seed, ("enkf",))
    x = model.rinit(p, J, stream.for_step(replicate, 0, "init")).astype(float)
    J, U, K = x.shape
    N = grid.n_times
    cond = np.zeros((1, N))
    means = np.zeros((N, U, K))
    warnings = []
    for n in range(N):
        t_start, t_end = grid.interval(n)
        if model.nonnegative:
            x = np.maximum(x, 0.0)
        x = model.rprocess(x, t_start, t_end, grid.dt, p,
                           stream.for_step(replicate, n + 1, "process"))
        y = data.counts[:, n]
        obs = ~np.isnan(y)
        if not np.any(obs):
            means[n] = x.mean(axis=0)
            continue
        X = x.reshape(J, U * K)
        Y = model.emeasure(x, t_end, p)[:, obs]
        R = model.vmeasure(x, t_end, p)[:, obs].mean(axis=0)
        y_bar = Y.mean(axis=0)
        Xc = X - X.mean(axis=0)
        Yc = Y - y_bar
        sigma_y = Yc.T @ Yc / (J - 1) + np.diag(R)
        sigma_xy = Xc.T @ Yc / (J - 1)
        try:
            np.linalg.cholesky(sigma_y)
        except np.linalg.LinAlgError:
            ridge = 1e-6 * max(np.trace(sigma_y) / U, 1.0)
            sigma_y = sigma_y + ridge * np.eye(sigma_y.shape[0])
            warnings.append(f"time {n + 1}: forecast covariance singular, ridge {ridge:.3g} added")
        gain = np.linalg.solve(sigma_y, sigma_xy.T).T
        rng = stream.for_step(replicate, n + 1, "noise")
        eps = rng.standard_normal(Y.shape) * np.sqrt(R)
        X = X + (y[obs] - Y + eps) @ gain.T
        x = X.reshape(J, U, K)
        cond[0, n] = _mvn_logpdf(y[obs], y_bar, sigma_y)
        means[n] = x.mean(axis=0)
    ess = np.full((1, N), float(J))
    return FilterResult(cond, ess, (tuple(range(U)),), seed, "enkf", means, [], warnings)


FILTERS = {"pf": particle_filter, "bpf": block_particle_filter, "enkf": enkf}


def run_filter(method: str, model, params, data, J: int, seed: int, *, replicate: int = 0, blocks=None):
    if method not in FILTERS:
        raise ValueError(f"unknown filter {method!r}; choose from {sorted(FILTERS)}")
    if method == "bpf":
        return block_particle_filter(model, params, data, J, blocks, seed, replicate=replicate)
    return FILTERS[method](model, params, data, J, seed, replicate=replicate)


def compare_filters(
    model,
    params,
    data,
    spec: Sequence[tuple[str, int]],
    seed: int = 0,
    n_reps: int = 5,
    *,
    blocks=None,
    threads: int | None = None,
) -> list[dict]:
    """Run each ``(filter, J)`` ``n_reps`` times; report mean log-likelihood and its SE."""
    if n_reps < 1:
        raise ValueError("need at least one replicate per filter")
    jobs = [(k, method, J, r) for k, (method, J) in enumerate(spec) for r in range(n_reps)]

    def one(job):
        k, method, J, r = job
        try:
            return run_filter(method, model, params, data, J, seed, replicate=1000 * k + r, blocks=blocks).loglik_total
        except Exception as exc:  # noqa: BLE001 - surfaced in the table row
            return exc

    results = parallel_map(one, jobs, threads)
    rows = []
    for k, (method, J) in enumerate(spec):
        vals = [res for (kk, *_), res in zip(jobs, results) if kk == k]
        errs = [str(v) for v in vals if isinstance(v, Exception)]
        ll = np.array([v for v in vals if not isinstance(v, Exception)], dtype=float)
        finite = ll.size > 0 and np.all(np.isfinite(ll))
        se = float(ll.std(ddof=1) / np.sqrt(ll.size)) if finite and ll.size > 1 else float("nan")
        rows.append({
            "filter": method,
            "J": J,
            "n_reps": int(ll.size),
            "loglik": float(ll.mean()) if ll.size else float("nan"),
            "se": se,
            "logliks": ll.tolist(),
            "error": "; ".join(errs),
        })
    return rows


def write_comparison_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "J", "n_reps", "loglik", "se", "error"])
        for r in rows:
            w.writerow([r["filter"], r["J"], r["n_reps"], repr(r["loglik"]), repr(r["se"]), r["error"]])

"""Profile likelihood and Monte Carlo adjusted profile (MCAP) intervals."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .core import ParameterSet, RngStream
from .ibpf import PerturbationSchedule, jitter, replicated_search

__all__ = [
    "ProfilePoint",
    "McapResult",
    "BoundaryMaximumError",
    "local_quadratic_smooth",
    "profile_grid",
    "mcap",
    "boundary_lrt",
    "read_profile_csv",
    "write_profile_csv",
]


class BoundaryMaximumError(ValueError):
    """The smoothed profile peaks at the edge of the grid."""


@dataclass
class ProfilePoint:
    value: float
    loglik: float
    se: float = 0.0
    maximized_params: ParameterSet | None = None
    error: str = ""

    @property
    def missing(self) -> bool:
        return not np.isfinite(self.loglik)


@dataclass
class McapResult:
    grid: np.ndarray
    smoothed: np.ndarray
    mle: float
    cutoff: float
    ci: tuple[float, float]
    mc_error_variance: float
    quadratic: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mle": self.mle, "cutoff": self.cutoff, "ci": list(self.ci),
                "mc_error_variance": self.mc_error_variance, "quadratic": self.quadratic,
                "warnings": self.warnings}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _tricube(d):
    return np.where(d < 1, (1 - np.clip(d, 0, 1) ** 3) ** 3, 0.0)


def _local_fit(x, y, x0, span):
    d = np.abs(x - x0)
    n = x.size
    q = min(n, max(int(np.floor(span * n)), 4))
    order = np.sort(d)
    h = order[q - 1] * (span if span > 1 else 1.0)
    # need three distinct abscissae with positive weight
    while np.unique(x[d < h]).size < 3:
        bigger = order[order > h]
        h = bigger[0] if bigger.size else h * 1.5
    w = _tricube(d / h)
    X = np.column_stack([np.ones(n), x - x0, (x - x0) ** 2])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return coef[0]


def local_quadratic_smooth(x, y, x_eval, span: float = 0.75) -> np.ndarray:
    """Loess-style local quadratic regression with tricube weights.

    The neighbourhood of each evaluation point is its ``floor(span * n)``
    nearest data points (at least 4); ``span > 1`` widens the window.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.array([_local_fit(x, y, x0, span) for x0 in np.atleast_1d(x_eval)])


def _clean(points: Sequence[ProfilePoint]):
    pts = [p for p in points if not p.missing]
    if len(pts) < 5:
        raise ValueError("need at least 5 non-missing profile points")
    if len({p.value for p in pts}) < 3:
        raise ValueError("need at least 3 distinct profiled values")
    x = np.array([p.value for p in pts], float)
    y = np.array([p.loglik for p in pts], float)
    order = np.argsort(x)
    return x[order], y[order]


def _interval(grid, smoothed, cutoff, warn_list):
    """Connected run of ``smoothed >= max - cutoff`` around the argmax."""
    k = int(np.argmax(smoothed))
    inside = smoothed >= smoothed[k] - cutoff
    lo = k
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = k
    while hi < grid.size - 1 and inside[hi + 1]:
        hi += 1
    if inside[:lo].any() or inside[hi + 1:].any():
        msg = "profile exceeds the cutoff on a region disconnected from the maximum"
        warn_list.append(msg)
        warnings.warn(msg, stacklevel=3)
    if lo == 0 or hi == grid.size - 1:
        warn_list.append("interval reaches the edge of the profiled range; widen the grid")
    return float(grid[lo]), float(grid[hi])


def mcap(points: Sequence[ProfilePoint], confidence: float = 0.95, span: float = 0.75,
         n_grid: int = 1000) -> McapResult:
    """MCAP confidence interval from noisy profile evaluations.

    The profile is smoothed by local quadratic regression. A weighted
    quadratic ``c + b x - a x^2`` is fitted around the smoothed maximum; the
    delta method applied to its coefficient covariance gives the Monte Carlo
    variance of the peak location, ``se_mc^2``, and the cutoff becomes
    ``chi2_1(confidence) * (a * se_mc^2 + 1/2)``.
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    x, y = _clean(points)
    grid = np.linspace(x[0], x[-1], n_grid)
    smoothed = local_quadratic_smooth(x, y, grid, span)
    k = int(np.argmax(smoothed))
    if k == 0 or k == grid.size - 1:
        raise BoundaryMaximumError(
            "smoothed profile is maximized at the grid boundary; widen the grid or use boundary_lrt"
        )
    arg = grid[k]

    dist = np.abs(x - arg)
    n_incl = min(x.size, max(int(span * x.size), 6))
    incl = np.argsort(dist, kind="stable")[:n_incl]
    w = np.zeros_like(x)
    maxdist = dist[incl].max()
    w[incl] = _tricube(dist[incl] / maxdist) if maxdist > 0 else 1.0
    X = np.column_stack([np.ones_like(x), x, -(x**2)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    c, b, a = coef
    resid = y - X @ coef
    df = int(np.sum(w > 0)) - 3
    notes: list[str] = []
    if df > 0:
        sigma2 = float(np.sum(w * resid**2) / df)
        vcov = sigma2 * np.linalg.pinv((X * w[:, None]).T @ X)
        var_b, var_a, cov_ab = vcov[1, 1], vcov[2, 2], vcov[1, 2]
    else:
        var_b = var_a = cov_ab = 0.0
        notes.append("too few weighted points to estimate Monte Carlo error")
    if a > 0:
        se_mc2 = (var_b - 2 * (b / a) * cov_ab + (b / a) ** 2 * var_a) / (4 * a**2)
        se_mc2 = max(float(se_mc2), 0.0)
        inflation = a * se_mc2
    else:
        se_mc2, inflation = 0.0, 0.0
        notes.append("local quadratic is not concave; no Monte Carlo inflation applied")
    q = chi2.ppf(confidence, df=1)
    cutoff = float(q * (inflation + 0.5))
    ci = _interval(grid, smoothed, cutoff, notes)
    return McapResult(grid, smoothed, float(arg), cutoff, ci, se_mc2,
                      {"a": float(a), "b": float(b), "c": float(c)}, notes)


def boundary_lrt(points: Sequence[ProfilePoint], confidence: float = 0.95, span: float = 0.75,
                 n_grid: int = 1000) -> tuple[float, float]:
    """Plain likelihood-ratio interval on the smoothed profile; may touch the grid edge."""
    x, y = _clean(points)
    grid = np.linspace(x[0], x[-1], n_grid)
    smoothed = local_quadratic_smooth(x, y, grid, span)
    return _interval(grid, smoothed, chi2.ppf(confidence, df=1) / 2, [])


def profile_grid(
    model,
    data,
    param_name: str,
    grid: Sequence[float],
    base: ParameterSet,
    *,
    J: int = 500,
    blocks=None,
    schedule: PerturbationSchedule | None = None,
    n_reps: int = 3,
    n_eval: int = 5,
    J_eval: int | None = None,
    jitter_sd: float = 0.0,
    seed: int = 0,
    threads: int | None = None,
) -> list[ProfilePoint]:
    """Maximize over the other free parameters at each fixed ``param_name`` value."""
    grid = list(grid)
    if len(grid) < 5:
        raise ValueError("profile grid needs at least 5 points")
    if param_name not in base.free_names:
        raise ValueError(f"{param_name!r} must be a free parameter of the base set")
    if schedule is None:
        schedule = PerturbationSchedule.default(base)
    stream = RngStream(seed, ("profile", param_name))
    points = []
    for i, value in enumerate(grid):
        fixed = base.replace(**{param_name: value}).with_fixed([param_name])
        rng = stream.for_step(i, 0, "jitter")
        starts = [fixed] + [jitter(fixed, jitter_sd, rng) for _ in range(n_reps - 1)]
        rows = replicated_search(model, starts, data, J, blocks, schedule, seed + 7919 * (i + 1),
                                 n_eval=n_eval, J_eval=J_eval, threads=threads)
        best = rows[0]
        if best["params"] is None:
            points.append(ProfilePoint(float(value), float("nan"), float("nan"), None, best["error"]))
        else:
            points.append(ProfilePoint(float(value), best["loglik"], best["se"], best["params"]))
    return points


def write_profile_csv(path, param_name: str, points: Sequence[ProfilePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "loglik", "se"])
        for p in points:
            w.writerow([param_name, repr(p.value), repr(p.loglik), repr(p.se)])


def read_profile_csv(path) -> tuple[str, list[ProfilePoint]]:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    names = {r["param"] for r in recs}
    if len(names) != 1:
        raise ValueError(f"{path}: expected a single profiled parameter, found {sorted(names)}")
    pts = [ProfilePoint(float(r["value"]), float(r["loglik"]), float(r.get("se") or 0.0)) for r in recs]
    return names.pop(), pts

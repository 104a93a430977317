"""Negative binomial benchmark models for panels of counts.

Two non-mechanistic baselines: IID negative binomial per unit with a
shared scale, and a first-order autoregressive negative binomial. Both use
the moment parameterization ``Var = m + m^2 / s``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import digamma, gammaln

from .core import ObservationPanel

__all__ = [
    "negbin_logpmf",
    "negbin_sample",
    "NegBinIidFit",
    "NegBinArFit",
    "fit_iid",
    "fit_ar",
    "conditional_logliks",
]

MU_FLOOR = 1e-8
LOG_S_BOUNDS = (-10.0, 25.0)


def negbin_logpmf(y, mean, s):
    """Log-pmf with mean ``mean`` and variance ``mean + mean^2 / s``.

    ``s = inf`` gives the Poisson limit; ``mean = 0`` is a point mass at 0.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("scale s must be positive")
    y, m, s = np.broadcast_arrays(np.asarray(y, float), np.asarray(mean, float), s)
    with np.errstate(divide="ignore", invalid="ignore"):
        nb = (gammaln(y + s) - gammaln(s) - gammaln(y + 1)
              - s * np.log1p(m / s) + y * (np.log(m) - np.log(s + m)))
        pois = y * np.log(m) - m - gammaln(y + 1)
    out = np.where(np.isinf(s), pois, nb)
    out = np.where(m > 0, out, np.where(y == 0, 0.0, -np.inf))
    return out


def negbin_sample(mean, s, rng: np.random.Generator, size=None):
    mean = np.asarray(mean, float)
    p = s / (s + mean)
    return rng.negative_binomial(s, p, size=size)


def _dlog_dmean(y, m, s):
    return y / m - (y + s) / (s + m)


def _dlog_ds(y, m, s):
    return digamma(y + s) - digamma(s) - np.log1p(m / s) + 1 - (y + s) / (s + m)


def _counts(data) -> np.ndarray:
    return np.asarray(data.counts if isinstance(data, ObservationPanel) else data, dtype=float)


@dataclass
class NegBinIidFit:
    mu: np.ndarray
    s: float
    loglik: float

    kind = "iid"

    @property
    def df(self) -> int:
        return self.mu.size + 1

    def cond_mean(self, y: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.mu[:, None], y.shape)

    def to_dict(self) -> dict:
        return {"model": "iid", "mu": self.mu.tolist(), "s": self.s, "loglik": self.loglik, "df": self.df}


@dataclass
class NegBinArFit:
    mu: np.ndarray
    phi: float
    s: float
    loglik: float
    converged: bool = True
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)

    kind = "ar"

    @property
    def df(self) -> int:
        return self.mu.size + 2

    def cond_mean(self, y: np.ndarray) -> np.ndarray:
        return self.mu[:, None] + self.phi * _lagged(y)

    def to_dict(self) -> dict:
        return {"model": "ar", "mu": self.mu.tolist(), "phi": self.phi, "s": self.s,
                "loglik": self.loglik, "df": self.df, "converged": self.converged,
                "iterations": self.iterations, "warnings": self.warnings}


def write_fit_json(path, fit) -> None:
    with open(path, "w") as fh:
        json.dump(fit.to_dict(), fh, indent=2)


def _lagged(y: np.ndarray) -> np.ndarray:
    """``y[:, n-1]`` with ``y[:, -1] = 0``; a missing lag counts as 0."""
    lag = np.zeros_like(y)
    lag[:, 1:] = np.nan_to_num(y[:, :-1], nan=0.0)
    return lag


def _total(y, m, s) -> float:
    obs = ~np.isnan(y)
    return float(negbin_logpmf(y[obs], m[obs], s).sum())


def fit_iid(data) -> NegBinIidFit:
    """Per-unit sample means (exact MLE for any fixed s) and a 1-D search for ``s``."""
    y = _counts(data)
    if np.any(np.all(np.isnan(y), axis=1)):
        raise ValueError("every unit needs at least one observation")
    mu = np.nanmean(y, axis=1)
    m = np.broadcast_to(mu[:, None], y.shape)
    if np.all(mu == 0):
        return NegBinIidFit(mu, float("inf"), 0.0)
    res = minimize_scalar(lambda ls: -_total(y, m, np.exp(ls)), bounds=LOG_S_BOUNDS,
                          method="bounded", options={"xatol": 1e-10})
    s = float(np.exp(res.x))
    ll = _total(y, m, s)
    # underdispersed data push s to the upper bound; the Poisson limit is the supremum there
    ll_pois = _total(y, m, np.inf)
    if ll_pois > ll:
        s, ll = float("inf"), ll_pois
    return NegBinIidFit(mu, s, ll)


def _unit_logliks(y, m, s):
    obs = ~np.isnan(y)
    vals = negbin_logpmf(np.where(obs, y, 0.0), m, s)
    return np.where(obs, vals, 0.0).sum(axis=1)


def fit_ar(data, *, fix_phi: float | None = None, max_iter: int = 500, tol: float = 1e-8) -> NegBinArFit:
    """Coordinate ascent on ``(phi, s)`` and per-unit ``mu``, started from the IID fit.

    A joint gradient step polishes the result; every accepted move increases
    the log-likelihood, so the fit is never below the IID benchmark.
    """
    y = _counts(data)
    if y.shape[1] < 2:
        raise ValueError("autoregressive fit needs at least two time points")
    iid = fit_iid(y)
    if np.isinf(iid.s) and np.all(iid.mu == 0):
        return NegBinArFit(iid.mu, 0.0 if fix_phi is None else float(fix_phi), iid.s, 0.0)
    lag = _lagged(y)
    obs = ~np.isnan(y)
    y0 = np.where(obs, y, 0.0)
    mu = np.maximum(iid.mu, MU_FLOOR)
    phi = 0.0 if fix_phi is None else float(fix_phi)
    s = min(iid.s, float(np.exp(LOG_S_BOUNDS[1])))
    U = y.shape[0]

    def total(mu, phi, s):
        return float(_unit_logliks(y, mu[:, None] + phi * lag, s).sum())

    ll = total(mu, phi, s)
    warnings: list[str] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ll_old = ll
        # (phi, s) given mu
        if fix_phi is None:
            def nll2(z):
                return -total(mu, z[0], np.exp(z[1]))
            res = minimize(nll2, [phi, np.log(s)], method="L-BFGS-B",
                           bounds=[(0.0, None), LOG_S_BOUNDS])
            if -res.fun > ll:
                phi, s, ll = float(res.x[0]), float(np.exp(res.x[1])), float(-res.fun)
        else:
            res = minimize_scalar(lambda ls: -total(mu, phi, np.exp(ls)), bounds=LOG_S_BOUNDS,
                                  method="bounded", options={"xatol": 1e-10})
            if -res.fun > ll:
                s, ll = float(np.exp(res.x)), float(-res.fun)
        # per-unit mu given (phi, s)
        new_mu = mu.copy()
        for u in range(U):
            yu, lu, ou = y0[u], lag[u], obs[u]
            hi = np.log(max(np.nanmax(y[u]), 1.0)) + 2.0
            r = minimize_scalar(
                lambda lm: -negbin_logpmf(yu[ou], np.exp(lm) + phi * lu[ou], s).sum(),
                bounds=(np.log(MU_FLOOR), hi), method="bounded", options={"xatol": 1e-10},
            )
            cand = float(np.exp(r.x))
            old_u = negbin_logpmf(yu[ou], mu[u] + phi * lu[ou], s).sum()
            if -r.fun > old_u:
                new_mu[u] = cand
        mu = new_mu
        ll = total(mu, phi, s)
        if ll - ll_old < tol:
            converged = True
            break
    if not converged:
        warnings.append(f"coordinate ascent did not converge in {max_iter} iterations")

    # joint polish with analytic gradients
    free_phi = fix_phi is None

    def pack(mu, phi, s):
        z = [np.log(mu), [np.log(s)]]
        if free_phi:
            z.insert(1, [phi])
        return np.concatenate(z)

    def unpack(z):
        mu_ = np.exp(z[:U])
        phi_ = z[U] if free_phi else phi
        return mu_, phi_, np.exp(z[-1])

    def nll(z):
        mu_, phi_, s_ = unpack(z)
        m = mu_[:, None] + phi_ * lag
        val = -total(mu_, phi_, s_)
        dm = np.where(obs, _dlog_dmean(y0, m, s_), 0.0)
        ds = np.where(obs, _dlog_ds(y0, m, s_), 0.0).sum()
        grad = [-(dm.sum(axis=1) * mu_)]
        if free_phi:
            grad.append([-(dm * lag).sum()])
        grad.append([-ds * s_])
        return val, np.concatenate(grad)

    bounds = [(np.log(MU_FLOOR), None)] * U + ([(0.0, None)] if free_phi else []) + [LOG_S_BOUNDS]
    res = minimize(nll, pack(mu, phi, s), jac=True, method="L-BFGS-B", bounds=bounds)
    if np.isfinite(res.fun) and -res.fun > ll:
        mu, phi, s = unpack(res.x)
        ll = total(mu, phi, s)
    # an all-zero unit has all-zero lags too, so mean 0 is exact and beats the floor
    zero = np.all(y0 == 0, axis=1)
    if np.any(zero):
        mu = np.where(zero, 0.0, mu)
        ll = total(mu, phi, s)
    return NegBinArFit(mu, float(phi), float(s), ll, converged, it, warnings)


def conditional_logliks(fit, data) -> np.ndarray:
    """``U x N`` conditional log-likelihood of each observation; missing cells are 0."""
    y = _counts(data)
    if y.shape[0] != fit.mu.size:
        raise ValueError(f"fit has {fit.mu.size} units but data has {y.shape[0]}")
    obs = ~np.isnan(y)
    m = fit.cond_mean(y)
    vals = negbin_logpmf(np.where(obs, y, 0.0), m, fit.s)
    return np.where(obs, vals, 0.0)


def write_conditional_csv(path, matrix, units) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "time", "cond_loglik"])
        for u, name in enumerate(units):
            for n in range(matrix.shape[1]):
                w.writerow([name, n + 1, repr(float(matrix[u, n]))])

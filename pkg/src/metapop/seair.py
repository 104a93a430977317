"""SEAIR metapopulation model with delayed case reporting.

Each unit carries compartments ``S, E, A, I, R`` for disease status,
``Ca, Cb, C`` for the two-stage reporting delay, and ``C_last``, the
value of ``C`` at the previous observation time, so the reported
increment is a function of the current state alone.

The process is an Euler-multinomial discretization: competing per-capita
exits from each compartment over a step of length ``dt`` are drawn
jointly, and arrivals from the shared transport pool are Poisson.
Transmission carries multiplicative gamma white noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_ndtr

from .core import ParameterSet, SpatPompModel, param_arrays
from .mobility import MobilityTensor

__all__ = [
    "COMPARTMENTS",
    "SeairParams",
    "SeairModel",
    "gamma_noise_increment",
    "infection_rate",
    "measurement_logprob",
    "r0",
    "case_increment",
    "PRESETS",
]

COMPARTMENTS = ("S", "E", "A", "I", "R", "Ca", "Cb", "C", "C_last")
S, E, A, I, R, CA, CB, C, C_LAST = range(len(COMPARTMENTS))
DELAY_STAGES = 2

TRANSFORMS = {
    "beta": "log",
    "mu": "logit",
    "Z": "log",
    "D": "log",
    "alpha": "logit",
    "Td": "log",
    "theta": "log",
    "tau": "log",
    "sigma_SE": "log",
    "E0": "log1p",
    "A0": "log1p",
}

REGIME_PARAMS = ("beta", "mu", "Z", "D", "alpha", "Td")


@dataclass(frozen=True)
class SeairParams:
    """Shared (non unit-specific) parameters of the SEAIR model.

    Durations are in days, ``beta`` per day, ``sigma_SE`` in day^(1/2).
    """

    beta_before: float
    beta_after: float
    mu_before: float
    mu_after: float
    Z_before: float
    Z_after: float
    D_before: float
    D_after: float
    alpha_before: float
    alpha_after: float
    theta: float
    tau: float
    sigma_SE: float
    E0: float
    A0: float
    Td_before: float = 9.0
    Td_after: float = 6.0

    def to_parameter_set(self, fixed=("Td_before", "Td_after")) -> ParameterSet:
        values = asdict(self)
        transforms = {k: TRANSFORMS[k.rsplit("_", 1)[0] if k.endswith(("_before", "_after")) else k]
                      for k in values}
        # zero-valued log parameters (e.g. tau=0, sigma_SE=0) cannot be estimated on the log scale
        fixed = set(fixed) | {k for k, v in values.items() if transforms[k] == "log" and v == 0}
        for k in fixed:
            if values[k] == 0 and transforms[k] == "log":
                transforms[k] = "identity"
        return ParameterSet(values, transforms, frozenset(fixed))


# Fitted values for the unconstrained and constrained models.
PRESETS = {
    "unconstrained": SeairParams(
        beta_before=0.73, beta_after=0.24, mu_before=1.00, mu_after=0.61,
        Z_before=0.55, Z_after=4.23, D_before=35.0, D_after=2.36,
        alpha_before=0.11, alpha_after=0.38, theta=2.34, tau=0.28,
        sigma_SE=2.08, E0=2712, A0=0,
    ),
    "constrained": SeairParams(
        beta_before=0.97, beta_after=0.22, mu_before=1.00, mu_after=0.78,
        Z_before=0.72, Z_after=0.72, D_before=3.87, D_after=3.87,
        alpha_before=0.08, alpha_after=0.48, theta=2.87, tau=0.32,
        sigma_SE=1.77, E0=3477, A0=0,
    ),
}


def r0(params, regime: str = "before") -> float:
    """Basic reproductive number ``(alpha + (1 - alpha) mu) D beta`` for a regime."""
    p = param_arrays(params) if not isinstance(params, dict) else params
    alpha = float(p[f"alpha_{regime}"])
    mu = float(p[f"mu_{regime}"])
    return (alpha + (1 - alpha) * mu) * float(p[f"D_{regime}"]) * float(p[f"beta_{regime}"])


def gamma_noise_increment(dt: float, sigma_se, rng: np.random.Generator, size=None):
    """Increment of a gamma process over ``dt``: mean ``dt``, variance ``sigma_se * dt``.

    Returns exactly ``dt`` wherever ``sigma_se == 0`` (or is negligibly small).
    """
    sigma = np.asarray(sigma_se, dtype=float)
    if size is None:
        size = sigma.shape
    sigma = np.broadcast_to(sigma, size)
    # below this the increment is dt to double precision, and dt / sigma would overflow
    noisy = sigma > 1e-12 * dt
    if not np.any(noisy):
        return np.full(size, float(dt))
    safe = np.where(noisy, sigma, 1.0)
    draw = rng.gamma(shape=dt / safe, scale=safe)
    return np.where(noisy, draw, float(dt))


def infection_rate(I_u, A_u, N_u, beta, mu, gamma_increment, dt):
    """Per-capita S to E rate for one step; zero in an empty unit."""
    N_u = np.asarray(N_u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = beta * (np.asarray(I_u) + mu * np.asarray(A_u)) / N_u * (gamma_increment / dt)
    return np.where(N_u > 0, rate, 0.0)


def _log_interval_prob(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for standardized bounds ``lo < hi``."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    upper = lo > 0
    a = np.where(upper, -hi, lo)
    b = np.where(upper, -lo, hi)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log1p(-np.exp(log_ndtr(a) - lb))
    return out


def measurement_logprob(y, c_un, tau):
    """Log-probability of ``y`` reports given true increment ``c_un``.

    Discretized normal with mean ``c_un`` and variance ``c_un + tau^2 c_un^2``;
    ``y = 0`` absorbs the whole lower tail. ``c_un = 0`` is a point mass at 0.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    y, c_un, tau = np.broadcast_arrays(np.asarray(y, float), np.asarray(c_un, float), tau)
    c = np.maximum(c_un, 0.0)
    v = c + tau**2 * c**2
    sd = np.sqrt(np.where(c > 0, v, 1.0))
    lo = np.where(y > 0, (y - 0.5 - c) / sd, -np.inf)
    hi = (y + 0.5 - c) / sd
    out = _log_interval_prob(lo, hi)
    point = np.where(y == 0, 0.0, -np.inf)
    out = np.where(c > 0, out, point)
    return np.where(np.isnan(y), 0.0, out)


def case_increment(state_prev, state_now, u: int) -> int:
    """Reported-case increment ``C_u(t_n) - C_u(t_{n-1})`` between two states."""
    inc = np.asarray(state_now)[u, C] - np.asarray(state_prev)[u, C]
    if inc < 0:
        raise RuntimeError(f"reported-case compartment decreased at unit {u}")
    return inc


def enkf_variance_floor(c_un, mode: str = "as-described"):
    """EnKF observation variance: ``max`` (a floor of 4) or the ``min`` form."""
    q = np.asarray(c_un, dtype=float) ** 2 / 4
    if mode == "as-described":
        return np.maximum(4.0, q)
    if mode == "as-printed":
        return np.minimum(4.0, q)
    raise ValueError(f"unknown floor mode {mode!r}")


def _binom(n, p, rng):
    """Binomial draw that also accepts real-valued counts.

    The fractional part of a real count moves deterministically in proportion ``p``.
    """
    if np.issubdtype(np.asarray(n).dtype, np.integer):
        return rng.binomial(n, p)
    n = np.maximum(n, 0.0)
    whole = np.floor(n)
    return rng.binomial(whole.astype(np.int64), p) + (n - whole) * p


def _competing_exits(n, hazards, rng):
    """Euler-multinomial exits of ``n`` individuals under integrated ``hazards``."""
    total = sum(hazards)
    p_exit = -np.expm1(-total)
    left = _binom(n, p_exit, rng)
    out = []
    remaining_h = total
    for h in hazards[:-1]:
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(remaining_h > 0, h / remaining_h, 0.0)
        k = _binom(left, np.clip(frac, 0.0, 1.0), rng)
        out.append(k)
        left = left - k
        remaining_h = remaining_h - h
    out.append(left)
    return out


class SeairModel(SpatPompModel):
    """SEAIR metapopulation model with two parameter regimes.

    Parameters
    ----------
    populations : array of initial unit populations.
    mobility : :class:`MobilityTensor` (or ``(days, U, U)`` array) of
        directed travel rates, persons/day from row to column.
    source_unit : index of the unit seeded with ``E0`` and ``A0``.
    lockdown_time : regime switch; steps starting at ``t >= lockdown_time``
        use the ``*_after`` parameters.
    tied : regime parameters (e.g. ``("Z", "D")``) whose ``_after`` value is
        replaced by the ``_before`` value.
    enkf_variance : measurement variance reported by :meth:`vmeasure`:
        ``"model"``, ``"as-described"`` or ``"as-printed"``.
    """

    compartments = COMPARTMENTS

    def __init__(
        self,
        populations,
        mobility=None,
        *,
        unit_names=None,
        source_unit: int = 0,
        lockdown_time: float = 14.0,
        t0: float = 0.0,
        tied=(),
        enkf_variance: str = "as-described",
    ):
        pop = np.asarray(populations, dtype=np.int64)
        if pop.ndim != 1 or np.any(pop <= 0):
            raise ValueError("populations must be a vector of positive counts")
        U = pop.size
        if mobility is None:
            mobility = np.zeros((1, U, U))
        flows = mobility.flows if isinstance(mobility, MobilityTensor) else np.asarray(mobility, float)
        if flows.ndim == 2:
            flows = flows[None]
        if flows.shape[1:] != (U, U):
            raise ValueError(f"mobility must be (days, {U}, {U}), got {flows.shape}")
        flows = flows.copy()
        idx = np.arange(U)
        flows[:, idx, idx] = 0.0
        self.populations = pop
        self.flows = flows
        self.outflow = flows.sum(axis=2)
        self.unit_names = tuple(unit_names) if unit_names is not None else tuple(f"u{u}" for u in range(U))
        if len(self.unit_names) != U:
            raise ValueError("one name per unit required")
        if not 0 <= source_unit < U:
            raise ValueError("source_unit out of range")
        self.source_unit = int(source_unit)
        self.lockdown_time = float(lockdown_time)
        self.t0 = float(t0)
        self.tied = tuple(tied)
        if enkf_variance not in ("model", "as-described", "as-printed"):
            raise ValueError(f"unknown enkf_variance {enkf_variance!r}")
        self.enkf_variance = enkf_variance

    # -- parameters ------------------------------------------------------

    def param_units(self, name):
        return (self.source_unit,) if name in ("E0", "A0") else None

    def ivp_names(self):
        return frozenset({"E0", "A0"})

    def _regime(self, p, t):
        tag = "before" if t < self.lockdown_time else "after"
        out = {}
        for base in REGIME_PARAMS:
            key = f"{base}_before" if (base in self.tied) else f"{base}_{tag}"
            out[base] = p[key]
        return out

    def _day(self, t):
        return int(np.clip(np.floor(t - self.t0 + 1e-9), 0, self.flows.shape[0] - 1))

    # -- process -----------------------------------------------------------

    def rinit(self, params, n_particles, rng=None):
        p = param_arrays(params)
        U = self.n_units
        x = np.zeros((n_particles, U, len(COMPARTMENTS)), dtype=np.int64)
        x[:, :, S] = self.populations
        e0 = np.rint(_at_unit(p["E0"], n_particles, U, self.source_unit)).astype(np.int64)
        a0 = np.rint(_at_unit(p["A0"], n_particles, U, self.source_unit)).astype(np.int64)
        if np.any(e0 < 0) or np.any(a0 < 0):
            raise ValueError("E0 and A0 must be non-negative")
        if np.any(e0 + a0 > self.populations[self.source_unit]):
            raise ValueError("E0 + A0 exceeds the source unit population")
        x[:, self.source_unit, E] = e0
        x[:, self.source_unit, A] = a0
        x[:, self.source_unit, S] -= e0 + a0
        return x

    def euler_step(self, x, t, dt, params, rng):
        """One Euler-multinomial step of length ``dt`` starting at time ``t``."""
        p = param_arrays(params)
        J, U, _ = x.shape
        reg = self._regime(p, t)
        shape = (J, U)
        beta = np.broadcast_to(reg["beta"], shape)
        mu = np.broadcast_to(reg["mu"], shape)
        alpha = np.broadcast_to(reg["alpha"], shape)
        Z = np.broadcast_to(reg["Z"], shape)
        D = np.broadcast_to(reg["D"], shape)
        Td = np.broadcast_to(reg["Td"], shape)
        theta = np.broadcast_to(p["theta"], shape)

        s, e, a, i, r = (x[:, :, k] for k in (S, E, A, I, R))
        N = (s + e + a + i + r).astype(float)

        dgamma = gamma_noise_increment(dt, p["sigma_SE"], rng, shape)
        h_se = infection_rate(i, a, N, beta, mu, dgamma, dt) * dt

        day = self._day(t)
        denom = np.maximum(N - i, 1.0)
        h_travel = theta * self.outflow[day] / denom * dt

        n_se, n_st = _competing_exits(s, [h_se, h_travel], rng)
        n_ei, n_ea, n_et = _competing_exits(e, [alpha / Z * dt, (1 - alpha) / Z * dt, h_travel], rng)
        n_ar, n_at = _competing_exits(a, [dt / D, h_travel], rng)
        (n_ir,) = _competing_exits(i, [dt / D], rng)
        (n_ab,) = _competing_exits(x[:, :, CA], [DELAY_STAGES / Td * dt], rng)
        (n_bc,) = _competing_exits(x[:, :, CB], [DELAY_STAGES / Td * dt], rng)

        M = self.flows[day]
        arrive = []
        for comp in (s, e, a):
            inflow = (comp / denom) @ M  # sum_j M_ju X_j / (N_j - I_j)
            arrive.append(rng.poisson(theta * inflow * dt))
        if not np.issubdtype(x.dtype, np.integer):
            arrive = [v.astype(float) for v in arrive]

        out = x.copy()
        out[:, :, S] = s - n_se - n_st + arrive[0]
        out[:, :, E] = e + n_se - n_ei - n_ea - n_et + arrive[1]
        out[:, :, A] = a + n_ea - n_ar - n_at + arrive[2]
        out[:, :, I] = i + n_ei - n_ir
        out[:, :, R] = r + n_ir + n_ar
        out[:, :, CA] = x[:, :, CA] + n_ei - n_ab
        out[:, :, CB] = x[:, :, CB] + n_ab - n_bc
        out[:, :, C] = x[:, :, C] + n_bc
        if np.issubdtype(out.dtype, np.integer) and np.any(out < 0):
            raise RuntimeError("negative count after Euler step")
        return out

    def rprocess(self, x, t_start, t_end, dt, params, rng):
        p = param_arrays(params)
        x = np.array(x, copy=True)
        x[:, :, C_LAST] = x[:, :, C]
        n_steps = int(round((t_end - t_start) / dt))
        t = t_start
        for k in range(n_steps):
            x = self.euler_step(x, t, dt, p, rng)
            t = t_start + (k + 1) * dt
        return x

    # -- measurement ---------------------------------------------------------

    def _increment(self, x):
        return x[:, :, C] - x[:, :, C_LAST]

    def dmeasure(self, y, x, t, params):
        p = param_arrays(params)
        y = np.asarray(y, dtype=float)
        return measurement_logprob(y[None, :], self._increment(x), p["tau"])

    def rmeasure(self, x, t, params, rng):
        p = param_arrays(params)
        c = np.maximum(self._increment(x).astype(float), 0.0)
        v = c + np.asarray(p["tau"]) ** 2 * c**2
        draw = rng.normal(c, np.sqrt(v))
        return np.where(c > 0, np.maximum(np.rint(draw), 0.0), 0.0)

    def emeasure(self, x, t, params):
        return self._increment(x).astype(float)

    def vmeasure(self, x, t, params):
        c = np.maximum(self._increment(x).astype(float), 0.0)
        if self.enkf_variance == "model":
            tau = np.asarray(param_arrays(params)["tau"])
            return c + tau**2 * c**2
        return enkf_variance_floor(c, self.enkf_variance)

    def dmeasure_unit(self, y, x, u, t, params):
        p = param_arrays(params)
        tau = np.broadcast_to(np.asarray(p["tau"], float), x.shape[:2])[:, u]
        return measurement_logprob(y, x[:, u, C] - x[:, u, C_LAST], tau)


def _at_unit(value, J, U, u):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(J, float(arr))
    return np.broadcast_to(arr, (J, U))[:, u]

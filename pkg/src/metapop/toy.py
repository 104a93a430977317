"""Small reference models with known likelihoods."""

from __future__ import annotations

import numpy as np

from .core import SpatPompModel

__all__ = ["LinearGaussianModel"]


class LinearGaussianModel(SpatPompModel):
    """``x_n = A x_{n-1} + N(0, Q)``, ``y_n = x_n + N(0, diag(r))``, ``x_0 ~ N(m0, P0)``.

    One latent value per unit. One transition is made per call to
    :meth:`rprocess`, whatever the interval length, so the Kalman filter is
    exact for it.
    """

    compartments = ("x",)
    nonnegative = False

    def __init__(self, A, Q, r, m0=None, P0=None):
        self.A = np.atleast_2d(np.asarray(A, float))
        U = self.A.shape[0]
        self.Q = np.atleast_2d(np.asarray(Q, float))
        self.r = np.broadcast_to(np.asarray(r, float), (U,)).copy()
        self.m0 = np.zeros(U) if m0 is None else np.broadcast_to(np.asarray(m0, float), (U,)).copy()
        self.P0 = np.eye(U) if P0 is None else np.atleast_2d(np.asarray(P0, float))
        self.unit_names = tuple(f"u{u}" for u in range(U))
        self._LQ = np.linalg.cholesky(self.Q)
        self._LP = np.linalg.cholesky(self.P0)

    def rinit(self, params, n_particles, rng):
        z = rng.standard_normal((n_particles, self.n_units))
        return (self.m0 + z @ self._LP.T)[:, :, None]

    def rprocess(self, x, t_start, t_end, dt, params, rng):
        z = rng.standard_normal((x.shape[0], self.n_units))
        return (x[:, :, 0] @ self.A.T + z @ self._LQ.T)[:, :, None]

    def dmeasure(self, y, x, t, params):
        y = np.asarray(y, float)[None, :]
        out = -0.5 * ((y - x[:, :, 0]) ** 2 / self.r + np.log(2 * np.pi * self.r))
        return np.where(np.isnan(y), 0.0, out)

    def rmeasure(self, x, t, params, rng):
        return x[:, :, 0] + rng.standard_normal(x.shape[:2]) * np.sqrt(self.r)

    def emeasure(self, x, t, params):
        return x[:, :, 0]

    def vmeasure(self, x, t, params):
        return np.broadcast_to(self.r, x.shape[:2])

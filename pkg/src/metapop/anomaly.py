"""Log-likelihood anomalies: mechanistic minus benchmark conditional log-likelihoods."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .filters import FilterResult

__all__ = ["AnomalyMatrix", "anomalies", "top_outliers", "write_anomaly_csv", "write_plot_csv"]


@dataclass(frozen=True, eq=False)
class AnomalyMatrix:
    values: np.ndarray
    model_cond: np.ndarray
    bench_cond: np.ndarray
    model_label: str = "model"
    benchmark_label: str = "benchmark"
    units: tuple[str, ...] = ()
    times: tuple = ()

    @property
    def shape(self):
        return self.values.shape


def _unit_rows(model_cond) -> np.ndarray:
    """``U x N`` matrix from a filter result with one unit per block."""
    if isinstance(model_cond, FilterResult):
        if any(len(b) != 1 for b in model_cond.blocks):
            raise ValueError("anomalies need a filter run with one unit per block")
        U = len(model_cond.blocks)
        out = np.empty_like(model_cond.cond_loglik)
        for b, (u,) in enumerate(model_cond.blocks):
            out[u] = model_cond.cond_loglik[b]
        return out.reshape(U, -1)
    return np.asarray(model_cond, dtype=float)


def anomalies(model_cond, bench_cond, *, model_label="model", benchmark_label="benchmark",
              units=(), times=()) -> AnomalyMatrix:
    m = _unit_rows(model_cond)
    b = np.asarray(bench_cond, dtype=float)
    if m.shape != b.shape:
        raise ValueError(f"shape mismatch: model {m.shape} vs benchmark {b.shape}")
    U, N = m.shape
    units = tuple(units) or tuple(f"u{u}" for u in range(U))
    times = tuple(times) or tuple(range(1, N + 1))
    return AnomalyMatrix(m - b, m, b, model_label, benchmark_label, units, times)


def top_outliers(matrix: AnomalyMatrix, k: int) -> list[tuple[str, object, float]]:
    """The ``k`` most negative anomalies, ties broken by (unit, time) index.

    ``-inf`` sorts first; NaN cells are skipped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    v = matrix.values
    U, N = v.shape
    uu, nn = np.meshgrid(np.arange(U), np.arange(N), indexing="ij")
    flat = v.ravel()
    keep = ~np.isnan(flat)
    order = np.lexsort((nn.ravel()[keep], uu.ravel()[keep], flat[keep]))[:k]
    u_sel = uu.ravel()[keep][order]
    n_sel = nn.ravel()[keep][order]
    return [(matrix.units[u], matrix.times[n], float(v[u, n])) for u, n in zip(u_sel, n_sel)]


def write_anomaly_csv(path, matrix: AnomalyMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "time", "model_cond", "bench_cond", "anomaly"])
        U, N = matrix.shape
        for u in range(U):
            for n in range(N):
                w.writerow([matrix.units[u], matrix.times[n], repr(float(matrix.model_cond[u, n])),
                            repr(float(matrix.bench_cond[u, n])), repr(float(matrix.values[u, n]))])


def write_plot_csv(path, matrix: AnomalyMatrix) -> None:
    """Long-format ``time,unit,anomaly`` rows for an anomaly-versus-time plot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "unit", "anomaly"])
        U, N = matrix.shape
        for n in range(N):
            for u in range(U):
                w.writerow([matrix.times[n], matrix.units[u], repr(float(matrix.values[u, n]))])

"""Accuracy metrics and report rows.

``R_A(X, U) = ||U X U^T - A||_F / (u ||A||_F)``,
``R_orth(U) = ||U U^T - I||_F / (u ||I||_F)`` and, per computed eigenvalue,
``E = min_lambda |computed - lambda| / (u |lambda|)`` over the true spectrum,
reported as mean and max.  The min is taken over the full list (O(n^2)).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .matrix import UNIT_ROUNDOFF, orthogonality_residual, similarity_residual

COLUMNS = (
    "matrix", "n", "seed", "condition", "workers", "tile_size", "deterministic",
    "R_A", "R_orth", "E_mean", "E_max", "wall_time",
    "sweeps", "bulges", "aed_sequential", "aed_parallel", "aed_deflated", "vigilant",
    "tasks_total", "converged",
)


def eigenvalue_errors(computed, truth) -> np.ndarray:
    c = np.asarray(computed, dtype=np.complex128).ravel()
    t = np.asarray(truth, dtype=np.complex128).ravel()
    if c.size == 0:
        return np.zeros(0)
    if t.size == 0:
        raise ValueError("empty reference spectrum")
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(c[:, None] - t[None, :]) / (UNIT_ROUNDOFF * np.abs(t)[None, :])
    rel = np.where(np.isnan(rel), np.inf, rel)
    return rel.min(axis=1)


@dataclass
class MetricsReport:
    R_A: float
    R_orth: float
    E_mean: float | None = None
    E_max: float | None = None
    wall_time: float = 0.0
    stats: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        if self.E_mean is None:
            d.pop("E_mean")
            d.pop("E_max")
        return d


def metrics(A, S, Q, truth=None, eigenvalues=None, wall_time: float = 0.0,
            stats: dict | None = None) -> MetricsReport:
    A = np.asarray(A, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if not (A.shape == S.shape == Q.shape) or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A, S and Q must be square matrices of one size")
    ra = similarity_residual(A, S, Q)
    ro = orthogonality_residual(Q)
    em = ex = None
    if truth is not None:
        if eigenvalues is None:
            from .kernels import block_eigenvalues
            eigenvalues = block_eigenvalues(S)
        e = eigenvalue_errors(eigenvalues, truth)
        n = A.shape[0]
        em = float(e.sum() / n) if n else 0.0
        ex = float(e.max()) if e.size else 0.0
    return MetricsReport(ra, ro, em, ex, wall_time, dict(stats or {}))


def report_row(report: MetricsReport, **meta) -> dict:
    """One flat row keyed by :data:`COLUMNS`; unknown errors stay empty."""
    st = report.stats
    row = {k: "" for k in COLUMNS}
    row.update({k: v for k, v in meta.items() if k in row})
    row.update(R_A=report.R_A, R_orth=report.R_orth, wall_time=report.wall_time)
    if report.E_mean is not None:
        row.update(E_mean=report.E_mean, E_max=report.E_max)
    for k in ("sweeps", "bulges", "aed_sequential", "aed_parallel", "aed_deflated", "vigilant",
              "tasks_total", "tile_size", "workers"):
        if k in st and row.get(k, "") == "":
            row[k] = st[k]
    return row


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(COLUMNS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def rows_to_json(rows) -> str:
    out = []
    for r in rows:
        out.append({k: v for k, v in r.items() if v != ""})
    return json.dumps(out, indent=2, default=float)

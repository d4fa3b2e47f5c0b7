"""Ordered variable selection: sequentially test whether the signal lies in the
span of the first k columns, with a sup-Fisher statistic over dyadic blocks of
further columns, stopping at the first acceptance."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import calibrate
from .design import DesignMatrix, OrthoState, gs_from_columns, project_coeffs
from .errors import DegenerateResidual, DegenerateStep, RankDeficient

RESIDUAL_TOL = 1e-14


@dataclass(frozen=True)
class TraceRow:
    k: int
    t: int
    D: int
    N: int
    stat: float
    threshold: float

    @property
    def centered(self) -> float:
        return self.stat - self.threshold


@dataclass(frozen=True)
class OrderedResult:
    k_hat: int
    trace: tuple
    exhausted: bool
    p: int

    @property
    def j_hat(self) -> frozenset:
        return frozenset(range(1, (self.p if self.exhausted else self.k_hat) + 1))


def _fisher_rows(y, ortho: OrthoState, k, grid, table, y_nsq=None, coeffs=None):
    """Per-t Fisher statistics of y against the dyadic blocks after basis
    position k, using prefix sums of squared Gram-Schmidt coefficients."""
    n = ortho.n
    if coeffs is None:
        coeffs = project_coeffs(y, ortho)
    if y_nsq is None:
        y_nsq = float(np.dot(y, y)) / n
    csq = np.cumsum(coeffs**2)
    rows = []
    for t, D, N in zip(grid.ts, grid.D, grid.N):
        num = csq[k + D - 1] - (csq[k - 1] if k > 0 else 0.0)
        resid = y_nsq - csq[k + D - 1]
        if resid < RESIDUAL_TOL:
            raise DegenerateResidual(k)
        stat = (N / D) * num / resid
        rows.append(TraceRow(k=k, t=t, D=D, N=N, stat=stat,
                             threshold=table.thresholds[t]))
    return rows


def t_statistic(y, ortho: OrthoState, k, table: calibrate.CalibrationTable):
    """Sup over t of (Fisher statistic - calibrated threshold); the test
    rejects when the value is positive.  Returns (value, trace rows)."""
    y = np.asarray(y, dtype=float)
    ts = tuple(sorted(table.levels))
    grid = calibrate.TGrid(k=k, ts=ts, D=tuple(2**t for t in ts),
                           N=tuple(ortho.n - (k + 2**t) for t in ts))
    rows = _fisher_rows(y, ortho, k, grid, table)
    return max(r.centered for r in rows), rows


def run_ordered(y, design: DesignMatrix, alpha, procedure="P1", mode="lowdim",
                n_mc=1000, seed=0, dependence_tol=1e-8) -> OrderedResult:
    """Estimate the number of leading relevant columns.

    Tests k = 1, 2, ... until the sup statistic is nonpositive; the estimate is
    the first accepted k.  ``lowdim`` requires linearly independent columns and
    ranges k over 1..p-1; ``highdim`` works on the rank profile and ranges k
    over 1..a_p-2.  Calibration uses P1 (simulated size alpha) or P2
    (Bonferroni level split).
    """
    if procedure not in ("P1", "P2"):
        raise ValueError("procedure must be P1 or P2")
    y = np.asarray(y, dtype=float)
    n, p = design.n, design.p
    ortho = gs_from_columns(design.columns, dependence_tol=dependence_tol)
    a_p = ortho.rank
    if mode == "lowdim":
        if a_p < p:
            raise RankDeficient("columns are linearly dependent; use highdim mode")
        k_last, span_limit, highdim = p - 1, p, False
    elif mode == "highdim":
        k_last, span_limit, highdim = a_p - 2, a_p, True
    else:
        raise ValueError("mode must be lowdim or highdim")

    coeffs = project_coeffs(y, ortho)
    y_nsq = float(np.dot(y, y)) / n
    trace = []
    for k in range(1, k_last + 1):
        grid = calibrate.t_grid(n, k, span_limit, highdim=highdim)
        if procedure == "P1":
            table = calibrate.cached_table(
                "P1", k, p, n, alpha, n_mc, seed,
                highdim_limit=span_limit if highdim else None)
        else:
            table = calibrate.cached_table(
                "P2", k, p, n, alpha, 0, None,
                highdim_limit=span_limit if highdim else None)
        rows = _fisher_rows(y, ortho, k, grid, table, y_nsq=y_nsq, coeffs=coeffs)
        trace.extend(rows)
        if max(r.centered for r in rows) <= 0.0:
            return OrderedResult(k_hat=k, trace=tuple(trace), exhausted=False, p=p)
    return OrderedResult(k_hat=k_last + 1, trace=tuple(trace), exhausted=True, p=p)


def trace_to_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "D", "N", "stat", "threshold", "decision"])
        for r in result.trace:
            w.writerow([r.k, r.t, r.D, r.N, repr(float(r.stat)), repr(float(r.threshold)),
                        "reject" if r.centered > 0 else "accept"])

"""Step two of the non-ordered selection: sequential multiple testing on the
ordered family.  Four modes: A (known noise sd), B (unknown), and their
orthonormal-design shortcuts whose calibration is design-free; the
high-dimensional variant walks the rank profile of the ordered columns."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import calibrate
from .design import DesignMatrix, gs_from_columns, project_coeffs
from .errors import (DegenerateResidual, NotOrthonormal, RankDeficient,
                     RequiresPltN)
from .ordering import VariableOrder

RESIDUAL_TOL = 1e-14
ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class TwoStepTraceRow:
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
class TwoStepResult:
    k_ring: int
    j_hat: frozenset
    trace: tuple
    mode_tag: str
    highdim: bool
    exhausted: bool
    tables: tuple = ()


@dataclass(frozen=True)
class StepPlan:
    """Per-run geometry: k range and the map from test step k to positions in
    the Gram-Schmidt basis of the ordered columns (identity in low dimension,
    rank-profile driven in high dimension)."""

    a_p: int
    k_last: int
    span_limit: int
    highdim: bool
    s_of_k: tuple  # s_k per k (1-based ordered-column count), index k-1


def lowdim_plan(p: int) -> StepPlan:
    return StepPlan(a_p=p, k_last=p - 1, span_limit=p, highdim=False,
                    s_of_k=tuple(range(1, p)))


def highdim_adapt(order: VariableOrder, ortho_state) -> StepPlan:
    """Step plan for a dependent ordered family: V_(k) spans the first s_k
    ordered columns (s_k the first prefix reaching rank k) and alternatives
    use the next basis directions of the rank profile."""
    profile = ortho_state.rank_profile
    a_p = profile[-1]
    if a_p < 3:
        raise RankDeficient("need span dimension at least 3 for the step plan")
    s_of_k = []
    for k in range(1, a_p - 1):
        s_of_k.append(next(s for s, a in enumerate(profile, start=1) if a == k))
    return StepPlan(a_p=a_p, k_last=a_p - 2, span_limit=a_p, highdim=True,
                    s_of_k=tuple(s_of_k))


def check_orthonormal(design: DesignMatrix, tol=ORTHO_TOL):
    """Require columns 2..p to be pairwise n-orthonormal."""
    X = design.columns[:, 1:]
    g = X.T @ X / design.n
    if not np.allclose(g, np.eye(g.shape[0]), atol=tol, rtol=0.0):
        raise NotOrthonormal("columns 2..p are not an orthonormal family")


def _run(y, design, order, alpha, n_mc, seed, mode_tag, sigma=None, plan=None,
         dependence_tol=1e-8) -> TwoStepResult:
    y = np.asarray(y, dtype=float)
    n, p = design.n, design.p
    Xo = design.columns[:, [j - 1 for j in order.order]]
    ortho = gs_from_columns(Xo, dependence_tol=dependence_tol)
    if plan is None:
        if ortho.rank < p:
            raise RankDeficient("ordered columns are dependent; use highdim_adapt")
        plan = lowdim_plan(p)
    coeffs = project_coeffs(y, ortho)
    csq = np.cumsum(coeffs**2)
    y_nsq = float(np.dot(y, y)) / n

    trace = []
    tables = []
    seeds = np.random.SeedSequence(seed).spawn(plan.k_last + 1)
    for k in range(1, plan.k_last + 1):
        grid = calibrate.t_grid(n, k, plan.span_limit, highdim=plan.highdim)
        kseed = seeds[k - 1]
        prefix = order.order[:plan.s_of_k[k - 1]]
        if mode_tag == "A":
            table = calibrate.calibrate_p3(design, k, prefix, alpha, n_mc,
                                           kseed, grid=grid)
        elif mode_tag == "B":
            table = calibrate.calibrate_p5(design, k, prefix, alpha, n_mc,
                                           kseed, grid=grid)
        elif mode_tag == "A_ortho":
            table = calibrate.cached_table(
                "P4", k, p, n, alpha, n_mc, seed,
                highdim_limit=plan.span_limit if plan.highdim else None)
        elif mode_tag == "B_ortho":
            table = calibrate.cached_table(
                "ZR", k, p, n, alpha, n_mc, seed,
                highdim_limit=plan.span_limit if plan.highdim else None)
        else:
            raise ValueError(f"unknown mode {mode_tag}")
        tables.append(table)
        rows = []
        for t, D, N in zip(grid.ts, grid.D, grid.N):
            num = csq[k + D - 1] - csq[k - 1]
            if mode_tag in ("A", "A_ortho"):
                stat = num / sigma**2
            else:
                resid = y_nsq - csq[k + D - 1]
                if resid < RESIDUAL_TOL:
                    raise DegenerateResidual(k)
                stat = (N / D) * num / resid
            rows.append(TwoStepTraceRow(k=k, t=t, D=D, N=N, stat=stat,
                                        threshold=table.thresholds[t]))
        trace.extend(rows)
        if max(r.centered for r in rows) <= 0.0:
            j_hat = frozenset(order.order[:k])
            return TwoStepResult(k_ring=k, j_hat=j_hat, trace=tuple(trace),
                                 mode_tag=mode_tag, highdim=plan.highdim,
                                 exhausted=False, tables=tuple(tables))
    return TwoStepResult(k_ring=plan.k_last + 1,
                         j_hat=frozenset(range(1, p + 1)), trace=tuple(trace),
                         mode_tag=mode_tag, highdim=plan.highdim,
                         exhausted=True, tables=tuple(tables))


def run_proc_a(y, design, order, sigma, alpha, n_mc=1000, seed=0,
               plan=None) -> TwoStepResult:
    """Known-variance two-step selection: the projection statistic of Y on each
    dyadic block of ordered directions against greedy-permutation thresholds."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return _run(y, design, order, alpha, n_mc, seed, "A", sigma=sigma, plan=plan)


def run_proc_a_ortho(y, design, order, sigma, alpha, n_mc=1000, seed=0,
                     plan=None) -> TwoStepResult:
    """Known-variance selection for orthonormal non-intercept columns; the
    threshold tables depend only on (k, p, n) and are shared across designs."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    check_orthonormal(design)
    return _run(y, design, order, alpha, n_mc, seed, "A_ortho", sigma=sigma,
                plan=plan)


def run_proc_b(y, design, order, alpha, n_mc=1000, seed=0,
               plan=None) -> TwoStepResult:
    """Unknown-variance two-step selection with the Fisher-type ratio
    statistic and greedy-permutation ratio thresholds."""
    return _run(y, design, order, alpha, n_mc, seed, "B", plan=plan)


def run_proc_b_ortho(y, design, order, alpha, n_mc=1000, seed=0,
                     plan=None) -> TwoStepResult:
    """Unknown-variance selection for orthonormal non-intercept columns using
    the ordered-normals ratio bound (needs p < n)."""
    check_orthonormal(design)
    if design.p >= design.n:
        raise RequiresPltN("the ratio bound needs p < n")
    return _run(y, design, order, alpha, n_mc, seed, "B_ortho", plan=plan)


def result_to_csv(result: TwoStepResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "D", "N", "stat", "threshold", "decision"])
        for r in result.trace:
            w.writerow([r.k, r.t, r.D, r.N, repr(float(r.stat)), repr(float(r.threshold)),
                        "reject" if r.centered > 0 else "accept"])


def selected_to_line(result: TwoStepResult) -> str:
    return " ".join(str(j) for j in sorted(result.j_hat))

"""Step one of the two-step selection: order the variables by increasing
p-values or by the bootstrap-Lasso (Bolasso) dichotomy, with the intercept
pinned to the first slot."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .design import DesignMatrix
from .errors import NonMonotoneFrequency, RankDeficient
from .lasso import BootstrapLasso, lambda_max

_LAMBDA_FLOOR_RATIO = 1e-4
_ANCHOR_SCAN_TOP = 0.5
_ANCHOR_SCAN_POINTS = 25


@dataclass(frozen=True)
class VariableOrder:
    """Permutation of {1, ..., p} with the intercept first; ``aux`` carries the
    per-slot score that produced the ranking (p-value, or critical penalty for
    Bolasso ranks, negative p-value tail fill-in)."""

    order: tuple
    method_tag: str
    aux: tuple
    n_restarts: int = 0
    grid_fallback: bool = False

    def __post_init__(self):
        p = len(self.order)
        if sorted(self.order) != list(range(1, p + 1)):
            raise ValueError("order must be a permutation of 1..p")
        if self.order[0] != 1:
            raise ValueError("the intercept must be ranked first")

    @property
    def p(self) -> int:
        return len(self.order)

    def prefix(self, k: int) -> tuple:
        return self.order[:k]


def _full_model_pvalues(X, y):
    n, p = X.shape
    if p >= n:
        raise RankDeficient("full-model p-values require p < n")
    q, r = np.linalg.qr(X)
    if np.min(np.abs(np.diag(r))) < 1e-10 * np.max(np.abs(np.diag(r))):
        raise RankDeficient("design is numerically rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    dof = n - p
    s2 = float(resid @ resid) / dof
    rinv = np.linalg.inv(r)
    var = s2 * np.sum(rinv * rinv, axis=1)
    tstat = beta / np.sqrt(var)
    return 2.0 * stats.t.sf(np.abs(tstat), dof)


def _marginal_pvalues(X, y):
    """Two-sided t p-value of each non-intercept variable in the regression of
    y on (intercept, that variable); the intercept slot gets p-value 0."""
    n, p = X.shape
    x0 = X[:, 0]
    yc = y - x0 * (x0 @ y) / (x0 @ x0)
    Xc = X - np.outer(x0, (x0 @ X) / (x0 @ x0))
    ssx = np.sum(Xc * Xc, axis=0)
    ssx[0] = 1.0
    bhat = (Xc.T @ y) / ssx
    ssy = float(yc @ yc)
    dof = n - 2
    sse = np.maximum(ssy - bhat**2 * ssx, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = bhat * np.sqrt(ssx * dof / np.maximum(sse, 1e-300))
    pv = 2.0 * stats.t.sf(np.abs(tstat), dof)
    pv[0] = 0.0
    return pv


def order_by_pvalues(design: DesignMatrix, y, mode="full") -> VariableOrder:
    """Ascending p-value ordering; ``full`` uses coefficient-nullity tests in
    the all-variables least-squares fit (needs p < n), ``marginal`` a per
    variable regression of y onto intercept plus that variable."""
    y = np.asarray(y, dtype=float)
    X = design.columns
    if mode == "full":
        pv = _full_model_pvalues(X, y)
    elif mode == "marginal":
        pv = _marginal_pvalues(X, y)
    else:
        raise ValueError("mode must be 'full' or 'marginal'")
    rest = sorted(range(2, design.p + 1), key=lambda j: (pv[j - 1], j))
    order = (1,) + tuple(rest)
    aux = (float(pv[0]),) + tuple(float(pv[j - 1]) for j in rest)
    return VariableOrder(order=order, method_tag=f"pval_{mode}", aux=aux)


def _freq_one_set(freqs) -> frozenset:
    """0-based penalized columns at exact bootstrap frequency 1."""
    return frozenset(int(j) for j in np.flatnonzero(freqs[1:] >= 1.0) + 1)


def _bolasso_attempt(design, y, n_boot, max_ordered, penalty_tol, rng):
    X = design.columns
    p = design.p
    lmax = lambda_max(design, y)
    if lmax <= 0:
        return [], []
    boot = BootstrapLasso(design, y, n_boot=n_boot, rng=rng)
    cache = {}

    def freqs(lam) -> np.ndarray:
        key = float(lam)
        if key not in cache:
            cache[key] = boot.frequencies(key)
        return cache[key]

    def f1(lam) -> frozenset:
        return _freq_one_set(freqs(lam))

    # Anchor the dichotomy at the penalty with the most frequency-one
    # variables.  Below that point (reachable only when p >= n, where the
    # resampled fits saturate) the frequency paths dip back under one, so the
    # hard floor is a useless anchor there.  Ties keep the largest penalty;
    # with p < n the count peaks at the floor and nothing changes.
    scan = np.geomspace(lmax * _ANCHOR_SCAN_TOP, lmax * _LAMBDA_FLOOR_RATIO,
                        _ANCHOR_SCAN_POINTS)
    lmin = float(scan[int(np.argmax([len(f1(lam)) for lam in scan]))])
    reachable = f1(lmin)
    ranked, crits = [], []
    hi = lmax  # known: nothing beyond `ranked` is at frequency one above hi
    cap = min(max_ordered, p - 1)
    while len(ranked) < cap and len(ranked) < len(reachable):
        lo = lmin
        # invariant under monotonicity: f1(hi) == ranked, f1(lo) strictly larger
        if not (set(ranked) <= f1(lo)):
            raise NonMonotoneFrequency()
        while hi - lo > penalty_tol * lmax:
            mid = 0.5 * (hi + lo)
            s = f1(mid)
            if not (set(ranked) <= s):
                raise NonMonotoneFrequency()
            if len(s) > len(ranked):
                lo = mid
            else:
                hi = mid
        # simultaneous arrivals within one bisection cell: break ties by the
        # frequency just above the cell, then by index
        fhi = freqs(hi)
        arrivals = sorted(f1(lo) - set(ranked), key=lambda j: (-fhi[j], j))
        if not arrivals:
            break
        for i, j in enumerate(arrivals):
            if len(ranked) >= cap:
                break
            ranked.append(j)
            # spread shared-cell critical penalties so ranks stay strict
            crits.append(hi - (i + 1) * (hi - lo) / (len(arrivals) + 1))
        hi = lo
    return ranked, crits


def _bolasso_grid_fallback(design, y, n_boot, max_ordered, rng):
    """Finest-grid scan used after repeated monotonicity violations: rank by
    the largest grid penalty at which the bootstrap frequency equals 1."""
    lmax = lambda_max(design, y)
    grid = np.geomspace(lmax, lmax * _LAMBDA_FLOOR_RATIO, 200)
    boot = BootstrapLasso(design, y, n_boot=n_boot, rng=rng)
    crit = np.full(design.p, -1.0)
    for lam in grid:  # descending
        for j in _freq_one_set(boot.frequencies(lam)):
            if crit[j] < 0:
                crit[j] = lam
    rankable = [j for j in np.argsort(-crit, kind="stable") if crit[j] > 0]
    ranked = [int(j) for j in rankable[:min(max_ordered, design.p - 1)]]
    return ranked, [float(crit[j]) for j in ranked]


def order_by_bolasso(design: DesignMatrix, y, n_boot=100, max_ordered=60,
                     penalty_tol=1e-3, rng=None, max_restarts=3) -> VariableOrder:
    """Bolasso dichotomy ordering: slot r holds the r-th variable whose
    bootstrap selection frequency reaches 1 as the penalty decreases, located
    by bisection; ties inside one bisection cell break by frequency then index.
    The ordering truncates at ``max_ordered`` (or at the set of variables that
    ever reach frequency 1); remaining variables follow in marginal p-value
    order.  A frequency path dropping back below 1 restarts the algorithm with
    fresh bootstrap draws, then falls back to a fine grid scan."""
    rng = np.random.default_rng(rng)
    y = np.asarray(y, dtype=float)
    n_restarts = 0
    grid_fallback = False
    ranked, crits = [], []
    for attempt in range(max_restarts + 1):
        try:
            ranked, crits = _bolasso_attempt(design, y, n_boot, max_ordered,
                                             penalty_tol, rng)
            break
        except NonMonotoneFrequency:
            n_restarts += 1
    else:
        ranked, crits = _bolasso_grid_fallback(design, y, n_boot, max_ordered, rng)
        grid_fallback = True

    pv = _marginal_pvalues(design.columns, y)
    ranked_1b = [j + 1 for j in ranked]
    tail = sorted((j for j in range(2, design.p + 1) if j not in set(ranked_1b)),
                  key=lambda j: (pv[j - 1], j))
    order = (1,) + tuple(ranked_1b) + tuple(tail)
    aux = (0.0,) + tuple(crits) + tuple(-float(pv[j - 1]) for j in tail)
    return VariableOrder(order=order, method_tag="bolasso", aux=aux,
                         n_restarts=n_restarts, grid_fallback=grid_fallback)


def order_to_csv(order: VariableOrder, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "variable", "score"])
        for r, (j, s) in enumerate(zip(order.order, order.aux), start=1):
            w.writerow([r, j, repr(float(s))])

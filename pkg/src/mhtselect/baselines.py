"""Comparison selectors: Benjamini-Hochberg on full-model or marginal
p-values, cross-validated Lasso, and cross-validated Bolasso; every selection
ends with a least-squares refit on the selected set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignMatrix
from .errors import NotConverged
from .lasso import (BootstrapLasso, cv_lambda, default_lambda_grid, fit_lasso,
                    make_folds)
from .ordering import _full_model_pvalues, _marginal_pvalues


@dataclass(frozen=True)
class BaselineResult:
    j_hat: frozenset
    refit_beta: np.ndarray
    method_tag: str


def ols_refit(design: DesignMatrix, y, selected) -> np.ndarray:
    """Least-squares coefficients on the selected columns, zeros elsewhere."""
    idx = sorted(int(j) for j in selected)
    beta = np.zeros(design.p)
    if idx:
        Xs = design.columns[:, [j - 1 for j in idx]]
        coef, *_ = np.linalg.lstsq(Xs, np.asarray(y, float), rcond=None)
        for pos, j in enumerate(idx):
            beta[j - 1] = coef[pos]
    return beta


def bh_rejections(pvalues, q) -> frozenset:
    """Benjamini-Hochberg step-up: 0-based indices of rejected hypotheses."""
    pv = np.asarray(pvalues, dtype=float)
    m = pv.size
    if m == 0:
        return frozenset()
    order = np.argsort(pv, kind="stable")
    sorted_pv = pv[order]
    thresholds = q * np.arange(1, m + 1) / m
    passing = np.flatnonzero(sorted_pv <= thresholds)
    if passing.size == 0:
        return frozenset()
    cut = passing[-1] + 1
    return frozenset(int(i) for i in order[:cut])


def select_fdr(design: DesignMatrix, y, q, mode="full") -> BaselineResult:
    """BH step-up at level q over the p-1 non-intercept p-values (full-model
    t-tests, or marginal-regression tests in high dimension); the intercept is
    always kept."""
    y = np.asarray(y, dtype=float)
    if mode == "full":
        pv = _full_model_pvalues(design.columns, y)
    elif mode == "marginal":
        pv = _marginal_pvalues(design.columns, y)
    else:
        raise ValueError("mode must be 'full' or 'marginal'")
    rejected = bh_rejections(pv[1:], q)
    j_hat = frozenset({1} | {i + 2 for i in rejected})
    return BaselineResult(j_hat=j_hat, refit_beta=ols_refit(design, y, j_hat),
                          method_tag="fdr" if mode == "full" else "fdr2")


def select_lasso_cv(design: DesignMatrix, y, rng=None, lambda_grid=None) -> BaselineResult:
    """Active set of the Lasso at the 10-fold cross-validated penalty."""
    rng = np.random.default_rng(rng)
    y = np.asarray(y, dtype=float)
    lam = cv_lambda(design, y, n_folds=10, lambda_grid=lambda_grid, rng=rng)
    try:
        fit = fit_lasso(design, y, lam)
    except NotConverged as exc:
        fit = exc.fit
    j_hat = frozenset({1} | set(fit.active_set))
    return BaselineResult(j_hat=j_hat, refit_beta=ols_refit(design, y, j_hat),
                          method_tag="lasso")


DEFAULT_FREQ_GRID = tuple(np.round(np.arange(0.5, 1.0001, 0.05), 2))


def select_bolasso_cv(design: DesignMatrix, y, n_boot=100, rng=None,
                      lambda_grid=None, freq_grid=DEFAULT_FREQ_GRID,
                      n_folds=10) -> BaselineResult:
    """Bolasso selection with (frequency threshold, penalty) tuned by 10-fold
    CV on the squared error of the refit at each candidate pair."""
    rng = np.random.default_rng(rng)
    y = np.asarray(y, dtype=float)
    X = design.columns
    n = design.n
    grid = (default_lambda_grid(design, y) if lambda_grid is None
            else np.asarray(lambda_grid, float))
    folds = make_folds(n, n_folds, rng)
    boot_seeds = rng.integers(0, 2**63 - 1, size=n_folds + 1)
    err = np.zeros((len(grid), len(freq_grid)))
    for fi, fold in enumerate(folds):
        train = np.setdiff1d(np.arange(n), fold)
        Xt, yt = X[train], y[train]
        Xv, yv = X[fold], y[fold]
        boot = BootstrapLasso(_RawDesign(Xt), yt, n_boot=n_boot,
                              rng=np.random.default_rng(int(boot_seeds[fi])))
        for gi, lam in enumerate(grid):
            freqs = boot.frequencies(lam)
            for ti, thr in enumerate(freq_grid):
                sel = np.flatnonzero(freqs >= thr)
                sel = sorted(set(sel) | {0})
                coef, *_ = np.linalg.lstsq(Xt[:, sel], yt, rcond=None)
                resid = yv - Xv[:, sel] @ coef
                err[gi, ti] += float(resid @ resid) / len(fold)
    gi, ti = np.unravel_index(int(np.argmin(err)), err.shape)
    lam, thr = float(grid[gi]), float(freq_grid[ti])
    freqs = BootstrapLasso(design, y, n_boot=n_boot,
                           rng=np.random.default_rng(int(boot_seeds[-1]))
                           ).frequencies(lam)
    j_hat = frozenset({1} | {int(j) + 1 for j in np.flatnonzero(freqs >= thr)})
    return BaselineResult(j_hat=j_hat, refit_beta=ols_refit(design, y, j_hat),
                          method_tag="bolasso")


class _RawDesign:
    """Minimal design-like wrapper for row-subset matrices (columns need not
    be unit norm during cross-validation)."""

    def __init__(self, columns):
        self.columns = np.asarray(columns, dtype=float)

    @property
    def n(self):
        return self.columns.shape[0]

    @property
    def p(self):
        return self.columns.shape[1]

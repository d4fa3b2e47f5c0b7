"""l1-penalized least squares by coordinate descent, 10-fold cross-validation
for the penalty, and bootstrap (Bolasso) machinery.

The objective is (1/2)||y - X beta||^2 + lam * sum_{j penalized} |beta_j|;
the intercept column X_1 is never penalized.  The hot loop is numba-compiled;
a pure-numpy fallback keeps the module importable without a working JIT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10**5

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco(a[0]) if a and callable(a[0]) else deco


@njit(cache=True)
def _cd_kernel(X, y, lam, penalized, beta, max_iter, tol):
    n, p = X.shape
    colsq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        colsq[j] = s
    r = y - X @ beta
    obj0 = 0.5 * np.dot(r, r)
    for j in range(p):
        if penalized[j]:
            obj0 += lam * abs(beta[j])
    prev_obj = obj0
    monotone = True
    n_sweeps = 0
    converged = False
    active = np.ones(p, dtype=np.bool_)
    full_pass = True
    while n_sweeps < max_iter:
        n_sweeps += 1
        max_delta = 0.0
        for j in range(p):
            if not full_pass and not active[j]:
                continue
            if colsq[j] <= 0.0:
                continue
            b_old = beta[j]
            z = np.dot(X[:, j], r) + colsq[j] * b_old
            if penalized[j]:
                az = abs(z) - lam
                b_new = (np.sign(z) * az / colsq[j]) if az > 0.0 else 0.0
            else:
                b_new = z / colsq[j]
            if b_new != b_old:
                d = b_old - b_new
                for i in range(n):
                    r[i] += X[i, j] * d
                beta[j] = b_new
                if abs(d) > max_delta:
                    max_delta = abs(d)
            active[j] = beta[j] != 0.0 or not penalized[j]
        obj = 0.5 * np.dot(r, r)
        for j in range(p):
            if penalized[j]:
                obj += lam * abs(beta[j])
        if obj > prev_obj + 1e-10 * (1.0 + abs(prev_obj)):
            monotone = False
        prev_obj = obj
        if max_delta < tol:
            if full_pass:
                converged = True
                break
            full_pass = True  # active set converged; verify with a full sweep
        else:
            full_pass = False
    return n_sweeps, converged, monotone


def _cd_numpy(X, y, lam, penalized, beta, max_iter, tol):  # pragma: no cover
    n, p = X.shape
    colsq = np.sum(X**2, axis=0)
    r = y - X @ beta
    prev_obj = 0.5 * r @ r + lam * np.abs(beta[penalized]).sum()
    monotone, converged, sweeps = True, False, 0
    while sweeps < max_iter:
        sweeps += 1
        max_delta = 0.0
        for j in range(p):
            if colsq[j] <= 0:
                continue
            z = X[:, j] @ r + colsq[j] * beta[j]
            if penalized[j]:
                b_new = np.sign(z) * max(abs(z) - lam, 0.0) / colsq[j]
            else:
                b_new = z / colsq[j]
            d = beta[j] - b_new
            if d != 0.0:
                r += X[:, j] * d
                beta[j] = b_new
                max_delta = max(max_delta, abs(d))
        obj = 0.5 * r @ r + lam * np.abs(beta[penalized]).sum()
        if obj > prev_obj + 1e-10 * (1 + abs(prev_obj)):
            monotone = False
        prev_obj = obj
        if max_delta < tol:
            converged = True
            break
    return sweeps, converged, monotone


@dataclass(frozen=True)
class LassoFit:
    lam: float
    coefficients: np.ndarray
    n_iters: int
    converged: bool
    objective_monotone: bool = True

    @property
    def active_set(self) -> tuple:
        """1-based indices of nonzero coefficients."""
        return tuple(int(j) + 1 for j in np.flatnonzero(self.coefficients))


def _penalized_mask(p: int, unpenalized_intercept: bool) -> np.ndarray:
    mask = np.ones(p, dtype=bool)
    if unpenalized_intercept:
        mask[0] = False
    return mask


def _as_columns(design):
    cols = getattr(design, "columns", design)
    return np.asarray(cols, dtype=float)


def fit_lasso(design, y, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              warm_start=None, unpenalized_intercept=True) -> LassoFit:
    """Coordinate-descent minimizer; raises NotConverged (carrying the partial
    fit) when the sweep budget is exhausted."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X = _as_columns(design)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    mask = _penalized_mask(p, unpenalized_intercept)
    kern = _cd_kernel if _HAVE_NUMBA else _cd_numpy
    # column-major: the kernel walks one column at a time
    sweeps, converged, monotone = kern(np.asfortranarray(X), y, float(lam),
                                       mask, beta, max_iter, tol)
    fit = LassoFit(lam=float(lam), coefficients=beta, n_iters=int(sweeps),
                   converged=bool(converged), objective_monotone=bool(monotone))
    if not converged:
        raise NotConverged(fit)
    return fit


def kkt_violation(design, y, fit: LassoFit, unpenalized_intercept=True) -> float:
    """Max KKT violation: |X_j.r| - lam on inactive penalized coordinates,
    |X_j.r - lam*sign(b_j)| on active ones, |X_j.r| on unpenalized ones."""
    X = _as_columns(design)
    r = np.asarray(y, float) - X @ fit.coefficients
    g = X.T @ r
    mask = _penalized_mask(X.shape[1], unpenalized_intercept)
    viol = 0.0
    for j in range(X.shape[1]):
        if not mask[j]:
            viol = max(viol, abs(g[j]))
        elif fit.coefficients[j] != 0.0:
            viol = max(viol, abs(g[j] - fit.lam * np.sign(fit.coefficients[j])))
        else:
            viol = max(viol, abs(g[j]) - fit.lam)
    return viol


def lambda_max(design, y, unpenalized_intercept=True) -> float:
    """Smallest penalty at which every penalized coefficient is zero (after
    profiling out unpenalized columns)."""
    X = _as_columns(design)
    y = np.asarray(y, dtype=float)
    mask = _penalized_mask(X.shape[1], unpenalized_intercept)
    if unpenalized_intercept:
        x0 = X[:, 0]
        y = y - x0 * (x0 @ y) / (x0 @ x0)
    return float(np.max(np.abs(X[:, mask].T @ y))) if mask.any() else 0.0


def default_lambda_grid(design, y, n_points=50, ratio=1e-3) -> np.ndarray:
    """Log-spaced grid from lambda_max down to lambda_max*ratio, descending."""
    lmax = lambda_max(design, y)
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, lmax * ratio, n_points)


def make_folds(n, n_folds, rng):
    """Seeded shuffle split into n_folds index arrays with sizes differing by <= 1."""
    idx = rng.permutation(n)
    return [np.sort(fold) for fold in np.array_split(idx, n_folds)]


def cv_lambda(design, y, n_folds=10, lambda_grid=None, rng=None) -> float:
    """Grid point minimizing mean held-out squared error over seeded folds."""
    rng = np.random.default_rng(rng)
    X = _as_columns(design)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < n_folds:
        raise ValueError("need n >= n_folds")
    grid = default_lambda_grid(design, y) if lambda_grid is None else np.asarray(lambda_grid, float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    order = np.argsort(grid)[::-1]  # fit from large to small for warm starts
    folds = make_folds(n, n_folds, rng)
    errs = np.zeros(grid.size)
    for fold in folds:
        train = np.setdiff1d(np.arange(n), fold)
        Xt, yt = X[train], y[train]
        Xv, yv = X[fold], y[fold]
        beta = np.zeros(X.shape[1])
        for gi in order:
            try:
                fit = fit_lasso(Xt, yt, grid[gi], warm_start=beta)
                beta = fit.coefficients
            except NotConverged as exc:  # keep partial fit as warm start
                beta = exc.fit.coefficients
            resid = yv - Xv @ beta
            errs[gi] += float(resid @ resid) / len(fold)
    errs /= n_folds
    # ties and near-ties resolve to the largest lambda (first in `order`)
    best = order[int(np.argmin(errs[order]))]
    return float(grid[best])


class BootstrapLasso:
    """Lasso over a fixed set of bootstrap row-resamples with per-resample
    warm starts; evaluation at many penalties is cheap and deterministic."""

    def __init__(self, design, y, n_boot=100, rng=None):
        rng = np.random.default_rng(rng)
        X = _as_columns(design)
        self.y = np.asarray(y, dtype=float)
        self.X = X
        self.n_boot = int(n_boot)
        n = X.shape[0]
        self.indices = rng.integers(0, n, size=(self.n_boot, n))
        self._warm = [np.zeros(X.shape[1]) for _ in range(self.n_boot)]
        self._Xb = [np.ascontiguousarray(X[ix]) for ix in self.indices]
        self._yb = [self.y[ix] for ix in self.indices]

    def frequencies(self, lam) -> np.ndarray:
        """Per-column fraction of resamples whose fit at ``lam`` is active."""
        p = self.X.shape[1]
        counts = np.zeros(p)
        for b in range(self.n_boot):
            try:
                fit = fit_lasso(self._Xb[b], self._yb[b], lam, warm_start=self._warm[b])
            except NotConverged as exc:
                fit = exc.fit
            self._warm[b] = fit.coefficients.copy()
            counts += fit.coefficients != 0.0
        return counts / self.n_boot


def bolasso_frequencies(design, y, lam, n_boot=100, rng=None) -> np.ndarray:
    """Fraction of bootstrap resamples whose Lasso fit at ``lam`` keeps each
    variable; rows of (X, y) are resampled jointly with replacement."""
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    return BootstrapLasso(design, y, n_boot=n_boot, rng=rng).frequencies(lam)

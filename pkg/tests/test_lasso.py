"""Coordinate-descent l1 solver: optimality, closed forms, grids, CV folds,
and bootstrap frequencies."""

import math

import numpy as np
import pytest

from mhtselect.design import normalize_columns
from mhtselect.errors import NotConverged
from mhtselect.lasso import (
    BootstrapLasso,
    bolasso_frequencies,
    cv_lambda,
    default_lambda_grid,
    fit_lasso,
    kkt_violation,
    lambda_max,
    make_folds,
)


def _instance(n, p, seed, sparse=3, sigma=0.5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[rng.choice(p, size=min(sparse, p), replace=False)] = rng.normal(0, 2, min(sparse, p))
    y = X @ beta + sigma * rng.standard_normal(n)
    return X, y


class TestKkt:
    def test_random_instances_satisfy_kkt(self):
        rng = np.random.default_rng(0)
        for i in range(200):
            n = int(rng.integers(10, 40))
            p = int(rng.integers(2, 15))
            X, y = _instance(n, p, seed=1000 + i)
            lam = float(rng.uniform(0.05, 2.0)) * max(1.0, lambda_max(X, y, unpenalized_intercept=False) / 10)
            fit = fit_lasso(X, y, lam, unpenalized_intercept=False)
            assert kkt_violation(X, y, fit, unpenalized_intercept=False) < 1e-4

    def test_unpenalized_intercept_gradient_zero(self):
        n = 30
        rng = np.random.default_rng(5)
        X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, 3))])
        y = 2.0 + rng.standard_normal(n)
        fit = fit_lasso(X, y, lam=5.0)
        r = y - X @ fit.coefficients
        assert abs(X[:, 0] @ r) < 1e-5
        assert 1 in fit.active_set


class TestOrthonormalClosedForm:
    def test_soft_threshold(self):
        # with X'X = I the solution is componentwise soft thresholding of X'y
        n, p = 32, 6
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = q  # Euclidean-orthonormal columns
        beta_true = np.array([3.0, -2.0, 0.0, 0.5, 0.0, -4.0])
        y = X @ beta_true + 0.1 * rng.standard_normal(n)
        z = X.T @ y
        for lam in [0.05, 0.4, 1.5, 3.0]:
            fit = fit_lasso(X, y, lam, unpenalized_intercept=False, tol=1e-12)
            expect = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
            assert np.allclose(fit.coefficients, expect, atol=1e-8)

    def test_lam_zero_is_least_squares(self):
        X, y = _instance(25, 5, seed=3)
        fit = fit_lasso(X, y, 0.0, unpenalized_intercept=False, tol=1e-12)
        ls, *_ = np.linalg.lstsq(X, y, rcond=None)
        assert np.allclose(fit.coefficients, ls, atol=1e-7)


class TestLambdaMax:
    def test_kills_all_penalized(self):
        X, y = _instance(30, 8, seed=9)
        lmax = lambda_max(X, y, unpenalized_intercept=False)
        fit = fit_lasso(X, y, lmax * (1 + 1e-10), unpenalized_intercept=False)
        assert fit.active_set == ()
        fit2 = fit_lasso(X, y, lmax * 0.95, unpenalized_intercept=False)
        assert len(fit2.active_set) >= 1

    def test_profiles_out_intercept(self):
        n = 24
        rng = np.random.default_rng(2)
        X = np.hstack([np.full((n, 1), 1.0 / math.sqrt(n)),
                       rng.standard_normal((n, 4))])
        y = 10.0 + rng.standard_normal(n)
        lmax = lambda_max(X, y)
        fit = fit_lasso(X, y, lmax * (1 + 1e-10))
        assert fit.active_set == (1,)  # only the intercept survives

    def test_grid_descending_from_lambda_max(self):
        X, y = _instance(20, 6, seed=1)
        grid = default_lambda_grid(X, y, n_points=10, ratio=1e-2)
        assert grid.size == 10
        assert grid[0] == pytest.approx(lambda_max(X, y))
        assert np.all(np.diff(grid) < 0)
        assert grid[-1] == pytest.approx(grid[0] * 1e-2)


class TestConvergenceControl:
    def test_not_converged_carries_partial_fit(self):
        X, y = _instance(40, 10, seed=4)
        with pytest.raises(NotConverged) as exc:
            fit_lasso(X, y, 0.01, max_iter=1, unpenalized_intercept=False)
        assert exc.value.fit.n_iters == 1
        assert not exc.value.fit.converged

    def test_warm_start_speeds_convergence(self):
        X, y = _instance(60, 20, seed=8)
        cold = fit_lasso(X, y, 0.5, unpenalized_intercept=False)
        warm = fit_lasso(X, y, 0.45, warm_start=cold.coefficients,
                         unpenalized_intercept=False)
        restart = fit_lasso(X, y, 0.45, unpenalized_intercept=False)
        assert warm.n_iters <= restart.n_iters
        assert np.allclose(warm.coefficients, restart.coefficients, atol=1e-5)

    def test_negative_lam_rejected(self):
        X, y = _instance(10, 3, seed=0)
        with pytest.raises(ValueError):
            fit_lasso(X, y, -0.1)

    def test_objective_monotone(self):
        X, y = _instance(35, 12, seed=6)
        fit = fit_lasso(X, y, 1.0, unpenalized_intercept=False)
        assert fit.objective_monotone


class TestCv:
    def test_folds_partition(self):
        rng = np.random.default_rng(3)
        folds = make_folds(23, 10, rng)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(np.concatenate(folds)) == list(range(23))

    def test_cv_returns_grid_point_and_is_seeded(self):
        X, y = _instance(50, 8, seed=11, sigma=1.0)
        grid = default_lambda_grid(X, y, n_points=15)
        a = cv_lambda(X, y, lambda_grid=grid, rng=5)
        b = cv_lambda(X, y, lambda_grid=grid, rng=5)
        assert a == b
        assert a in grid

    def test_cv_picks_small_lambda_for_strong_signal(self):
        # strong noiseless signal: near-zero penalty must win
        X, y = _instance(80, 5, seed=12, sigma=0.01)
        lam = cv_lambda(X, y, lambda_grid=np.array([1e-4, 50.0]), rng=2)
        assert lam == pytest.approx(1e-4)


class TestBootstrap:
    def test_frequencies_in_unit_interval(self):
        X, y = _instance(30, 6, seed=14)
        f = bolasso_frequencies(X, y, lam=0.3, n_boot=25, rng=7)
        assert f.shape == (6,)
        assert np.all((f >= 0) & (f <= 1))

    def test_seeded_determinism(self):
        X, y = _instance(30, 6, seed=14)
        f1 = bolasso_frequencies(X, y, lam=0.3, n_boot=25, rng=7)
        f2 = bolasso_frequencies(X, y, lam=0.3, n_boot=25, rng=7)
        assert np.array_equal(f1, f2)

    def test_strong_variables_near_one(self):
        rng = np.random.default_rng(20)
        n = 60
        X = normalize_columns(rng.standard_normal((n, 5))).columns
        beta = np.array([5.0, -5.0, 0.0, 0.0, 0.0])
        y = X @ beta + 0.2 * rng.standard_normal(n)
        f = bolasso_frequencies(X, y, lam=5.0, n_boot=40, rng=1)
        assert f[0] > 0.95 and f[1] > 0.95
        assert f[2:].max() < 0.3

    def test_reusable_resamples_across_penalties(self):
        X, y = _instance(25, 5, seed=16)
        bl = BootstrapLasso(X, y, n_boot=10, rng=3)
        f_hi = bl.frequencies(5.0)
        f_lo = bl.frequencies(0.01)
        assert f_lo.sum() >= f_hi.sum()  # smaller penalty keeps more variables

    def test_rejects_zero_boot(self):
        X, y = _instance(10, 3, seed=0)
        with pytest.raises(ValueError):
            bolasso_frequencies(X, y, 0.1, n_boot=0)

"""Comparison selectors: step-up p-value control, cross-validated l1
selection, and the bootstrap variant."""

import itertools
import math

import numpy as np
import pytest

from mhtselect.baselines import (
    bh_rejections,
    ols_refit,
    select_bolasso_cv,
    select_fdr,
    select_lasso_cv,
)
from mhtselect.design import normalize_columns


def _design_with_signal(n, p, strong, seed, beta=7.0, sigma=1.0):
    rng = np.random.default_rng(seed)
    raw = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])
    d = normalize_columns(raw, has_intercept=True)
    coef = np.zeros(p)
    for j in strong:
        coef[j - 1] = beta
    y = d.columns @ coef + sigma * rng.standard_normal(n)
    return d, y


def _bh_oracle(pv, q):
    """Largest rejection set R with max_{i in R} p_i <= q |R| / m, filled with
    the |R| smallest p-values; found by exhaustive search over subsets."""
    m = len(pv)
    best = frozenset()
    for r in range(1, m + 1):
        for sub in itertools.combinations(range(m), r):
            if max(pv[i] for i in sub) <= q * r / m and r > len(best):
                best = frozenset(sub)
    return best


class TestStepUp:
    def test_hand_example(self):
        pv = [0.01, 0.04, 0.03, 0.5]
        # sorted 0.01, 0.03, 0.04, 0.5 vs 0.025, 0.05, 0.075, 0.1
        assert bh_rejections(pv, 0.1) == frozenset({0, 1, 2})

    def test_none_and_all(self):
        assert bh_rejections([0.9, 0.8], 0.1) == frozenset()
        assert bh_rejections([0.001, 0.002], 0.1) == frozenset({0, 1})
        assert bh_rejections([], 0.1) == frozenset()

    def test_against_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(300):
            m = int(rng.integers(1, 9))
            if rng.random() < 0.4:
                pv = rng.random(m) ** 2  # push some mass toward zero
            else:
                pv = rng.random(m)
            q = float(rng.uniform(0.01, 0.5))
            assert bh_rejections(pv, q) == _bh_oracle(list(pv), q)

    def test_large_vectors_against_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(40):
            m = 12
            pv = np.concatenate([rng.random(6) * 0.1, rng.random(6)])
            rng.shuffle(pv)
            q = 0.2
            assert bh_rejections(pv, q) == _bh_oracle(list(pv), q)


class TestOlsRefit:
    def test_zeros_off_selection_exact_on(self):
        d, y = _design_with_signal(30, 6, strong=(2, 4), seed=2)
        beta = ols_refit(d, y, {1, 2, 4})
        assert beta[2] == 0.0 and beta[4] == 0.0 and beta[5] == 0.0
        Xs = d.columns[:, [0, 1, 3]]
        ref, *_ = np.linalg.lstsq(Xs, y, rcond=None)
        assert np.allclose(beta[[0, 1, 3]], ref, atol=1e-10)

    def test_empty_selection(self):
        d, y = _design_with_signal(20, 4, strong=(2,), seed=3)
        assert np.array_equal(ols_refit(d, y, ()), np.zeros(4))


class TestFdrSelect:
    def test_keeps_intercept_and_finds_signal(self):
        d, y = _design_with_signal(80, 10, strong=(3, 7), seed=4, beta=9.0)
        res = select_fdr(d, y, q=0.05, mode="full")
        assert 1 in res.j_hat
        assert {3, 7} <= res.j_hat
        assert res.method_tag == "fdr"
        # refit is the least-squares fit on the selection
        assert np.allclose(res.refit_beta, ols_refit(d, y, res.j_hat))

    def test_marginal_mode_tag(self):
        d, y = _design_with_signal(40, 6, strong=(2,), seed=5)
        res = select_fdr(d, y, q=0.1, mode="marginal")
        assert res.method_tag == "fdr2"
        assert 1 in res.j_hat

    def test_null_keeps_only_intercept_mostly(self):
        hits = 0
        for s in range(40):
            d, y = _design_with_signal(40, 8, strong=(), seed=100 + s)
            res = select_fdr(d, y, q=0.1)
            hits += len(res.j_hat) > 1
        assert hits / 40 <= 0.25

    def test_bad_mode(self):
        d, y = _design_with_signal(20, 4, strong=(2,), seed=6)
        with pytest.raises(ValueError):
            select_fdr(d, y, q=0.1, mode="greedy")


class TestLassoSelect:
    def test_recovers_strong_support(self):
        d, y = _design_with_signal(60, 6, strong=(2, 5), seed=7, beta=9.0,
                                   sigma=0.5)
        res = select_lasso_cv(d, y, rng=1)
        assert {1, 2, 5} <= res.j_hat
        assert res.method_tag == "lasso"

    def test_seeded_determinism(self):
        d, y = _design_with_signal(40, 6, strong=(3,), seed=8)
        a = select_lasso_cv(d, y, rng=4)
        b = select_lasso_cv(d, y, rng=4)
        assert a.j_hat == b.j_hat
        assert np.array_equal(a.refit_beta, b.refit_beta)


class TestBolassoSelect:
    def test_recovers_support_and_is_seeded(self):
        d, y = _design_with_signal(50, 5, strong=(2, 4), seed=9, beta=9.0,
                                   sigma=0.5)
        grid = np.geomspace(20.0, 0.05, 8)
        a = select_bolasso_cv(d, y, n_boot=12, rng=2, lambda_grid=grid,
                              freq_grid=(0.8, 1.0), n_folds=5)
        b = select_bolasso_cv(d, y, n_boot=12, rng=2, lambda_grid=grid,
                              freq_grid=(0.8, 1.0), n_folds=5)
        assert a.j_hat == b.j_hat
        assert 1 in a.j_hat
        assert {2, 4} <= a.j_hat
        assert a.method_tag == "bolasso"

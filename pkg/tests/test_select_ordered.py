"""Sequential sup-Fisher selection on an a-priori variable ordering."""

import math

import numpy as np
import pytest

from mhtselect import calibrate
from mhtselect.design import gs_from_columns, normalize_columns
from mhtselect.errors import RankDeficient
from mhtselect.select_ordered import (
    OrderedResult,
    run_ordered,
    t_statistic,
    trace_to_csv,
)


def _design(n, p, seed):
    rng = np.random.default_rng(seed)
    raw = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])
    return normalize_columns(raw, has_intercept=True)


class TestTStatistic:
    def test_matches_dense_projector_oracle(self):
        # statistic recomputed with explicit QR projectors of the leading
        # column blocks must agree to high precision
        rng = np.random.default_rng(0)
        for trial in range(25):
            n = int(rng.integers(12, 26))
            p = int(rng.integers(4, min(n - 1, 12) + 1))
            d = _design(n, p, seed=100 + trial)
            y = rng.standard_normal(n)
            ortho = gs_from_columns(d.columns)
            k = int(rng.integers(1, p - 1))
            tab = calibrate.calibrate_p2(k, (n, p), 0.1)
            val, rows = t_statistic(y, ortho, k, tab)
            Q, _ = np.linalg.qr(d.columns)
            for r in rows:
                pk = Q[:, :k] @ (Q[:, :k].T @ y)
                pkd = Q[:, :k + r.D] @ (Q[:, :k + r.D].T @ y)
                num = float((pkd - pk) @ (pkd - pk)) / n
                resid = float((y - pkd) @ (y - pkd)) / n
                oracle = (r.N / r.D) * num / resid
                assert r.stat == pytest.approx(oracle, abs=1e-8)
            assert val == pytest.approx(
                max(r.stat - r.threshold for r in rows), abs=1e-12)


class TestRunOrdered:
    def test_recovers_leading_signal(self):
        n, p, k0 = 80, 12, 4
        d = _design(n, p, seed=1)
        rng = np.random.default_rng(2)
        beta = np.zeros(p)
        beta[:k0] = math.sqrt(n)
        y = d.columns @ beta + rng.standard_normal(n)
        for proc in ("P1", "P2"):
            res = run_ordered(y, d, alpha=0.1, procedure=proc, n_mc=1500, seed=3)
            assert res.k_hat == k0
            assert res.j_hat == frozenset(range(1, k0 + 1))
            assert not res.exhausted

    def test_pure_noise_selects_little(self):
        n, p = 60, 10
        d = _design(n, p, seed=4)
        rng = np.random.default_rng(5)
        over = 0
        for _ in range(60):
            y = d.columns[:, 0] * 2.0 + rng.standard_normal(n)
            res = run_ordered(y, d, alpha=0.1, procedure="P1", n_mc=1500, seed=6)
            over += res.k_hat > 1
        assert over / 60 <= 0.25  # nominal 0.1 plus Monte-Carlo slack

    def test_exhausted_flags_full_selection(self):
        # signal spread over every direction forces rejection at each k
        n, p = 40, 6
        d = _design(n, p, seed=7)
        beta = np.full(p, 5.0 * math.sqrt(n))
        beta[1::2] *= -1.0
        y = d.columns @ beta + 0.01 * np.random.default_rng(8).standard_normal(n)
        res = run_ordered(y, d, alpha=0.1, procedure="P2")
        assert res.exhausted
        assert res.k_hat == p
        assert res.j_hat == frozenset(range(1, p + 1))

    def test_lowdim_rejects_dependent_columns(self):
        n = 30
        base = _design(n, 5, seed=9).columns
        dup = np.hstack([base, base[:, -1:]])
        d = normalize_columns(dup, has_intercept=True)
        with pytest.raises(RankDeficient):
            run_ordered(np.zeros(n) + base[:, 0], d, alpha=0.1, mode="lowdim",
                        procedure="P2")

    def test_highdim_on_dependent_columns(self):
        n, k0 = 50, 2
        base = _design(n, 6, seed=10).columns
        dup = np.hstack([base, base[:, 1:3]])  # p=8, rank 6
        d = normalize_columns(dup, has_intercept=True)
        rng = np.random.default_rng(11)
        beta = np.zeros(8)
        beta[:k0] = math.sqrt(n)
        y = dup @ beta + rng.standard_normal(n)
        res = run_ordered(y, d, alpha=0.1, mode="highdim", procedure="P2")
        assert res.k_hat == k0

    def test_invalid_arguments(self):
        d = _design(20, 4, seed=12)
        y = np.zeros(20)
        with pytest.raises(ValueError):
            run_ordered(y, d, alpha=0.1, procedure="P7")
        with pytest.raises(ValueError):
            run_ordered(y, d, alpha=0.1, mode="middim")


class TestTrace:
    def test_trace_stops_at_acceptance_and_serializes(self, tmp_path):
        n, p = 40, 6
        d = _design(n, p, seed=13)
        rng = np.random.default_rng(14)
        beta = np.zeros(p)
        beta[:2] = math.sqrt(n)
        y = d.columns @ beta + rng.standard_normal(n)
        res = run_ordered(y, d, alpha=0.1, procedure="P2")
        ks = sorted({r.k for r in res.trace})
        assert ks == list(range(1, res.k_hat + 1))
        path = tmp_path / "trace.csv"
        trace_to_csv(res, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("k,t,D,N,stat,threshold")
        assert len(lines) == len(res.trace) + 1
        assert lines[-1].endswith("accept")

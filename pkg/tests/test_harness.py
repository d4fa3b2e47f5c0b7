"""Simulation harness: scenario configs, dataset generation, metric
reduction, worker invariance, and the command-line entry points."""

import math

import numpy as np
import pytest

from mhtselect.design import model_support
from mhtselect.errors import ConfigError
from mhtselect.harness import (
    RepOutcome,
    SimConfig,
    _method_levels,
    compute_metrics,
    generate_dataset,
    main,
    metrics_to_csv,
    outcomes_to_jsonl,
    parse_config,
    run_scenario,
)

CONFIG_TEXT = """
# toy scenario
n = 40
p = 8
k0_nonintercept = 2
beta_value = 6.0
methods = fdr, proc_ordered
alpha_levels = 0.1
q_levels = 0.05, 0.1
replications = 3
seed = 17
n_mc = 200
"""


class TestParseConfig:
    def test_full_round(self):
        c = parse_config(CONFIG_TEXT)
        assert (c.n, c.p, c.k0_nonintercept) == (40, 8, 2)
        assert c.methods == ("fdr", "proc_ordered")
        assert c.alpha_levels == (0.1,)
        assert c.q_levels == (0.05, 0.1)
        assert c.seed == 17 and c.replications == 3
        assert c.design_family == "gaussian_normalized"

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config(CONFIG_TEXT + "\nrho = 0.5\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("n 40")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config(CONFIG_TEXT.replace("n = 40", "n = forty"))
        with pytest.raises(ConfigError):
            parse_config(CONFIG_TEXT + "\nintercept_in_truth = maybe\n")

    def test_validation_rules(self):
        with pytest.raises(ConfigError):
            SimConfig(n=20, p=4, k0_nonintercept=4, beta_value=1.0)
        with pytest.raises(ConfigError):
            SimConfig(n=20, p=5, k0_nonintercept=2, beta_value=1.0,
                      methods=("ridge",))
        with pytest.raises(ConfigError):
            SimConfig(n=20, p=5, k0_nonintercept=2, beta_value=1.0,
                      design_family="cauchy")
        with pytest.raises(ConfigError):
            SimConfig(n=10, p=20, k0_nonintercept=2, beta_value=1.0,
                      design_family="orthonormalized")


class TestGenerateDataset:
    def _config(self, **kw):
        base = dict(n=30, p=6, k0_nonintercept=2, beta_value=5.0, seed=3)
        base.update(kw)
        return SimConfig(**base)

    def test_deterministic_per_replicate(self):
        c = self._config()
        d1, y1, m1 = generate_dataset(c, 4)
        d2, y2, m2 = generate_dataset(c, 4)
        assert np.array_equal(d1.columns, d2.columns)
        assert np.array_equal(y1, y2)
        assert m1.support == m2.support
        d3, y3, _ = generate_dataset(c, 5)
        assert not np.array_equal(y1, y3)

    def test_column_scaling(self):
        c = self._config()
        d, _, _ = generate_dataset(c, 0)
        n = c.n
        assert np.allclose(d.columns[:, 0], 1.0 / math.sqrt(n))
        norms = np.sum(d.columns[:, 1:] ** 2, axis=0) / n
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_orthonormal_family_gram(self):
        c = self._config(design_family="orthonormalized")
        d, _, _ = generate_dataset(c, 1)
        X = d.columns[:, 1:]
        g = X.T @ X / c.n
        assert np.allclose(g, np.eye(c.p - 1), atol=1e-8)

    def test_support_and_signal(self):
        c = self._config()
        d, y, m = generate_dataset(c, 2)
        sup = model_support(m)
        assert 1 in sup
        assert len(sup) == 3
        nz = np.flatnonzero(m.beta) + 1
        assert set(nz) == sup - {1}
        assert np.all(m.beta[list(nz - 1)] == 5.0)

    def test_intercept_excluded_when_disabled(self):
        c = self._config(intercept_in_truth=False)
        _, _, m = generate_dataset(c, 0)
        sup = model_support(m)
        assert 1 not in sup
        assert len(sup) == 2


class TestMethodLevels:
    def test_level_routing(self):
        c = SimConfig(n=30, p=6, k0_nonintercept=2, beta_value=1.0,
                      methods=("proc_ordered", "fdr", "lasso"),
                      alpha_levels=(0.05, 0.1), q_levels=(0.2,))
        pairs = _method_levels(c)
        assert ("proc_ordered", 0.05) in pairs and ("proc_ordered", 0.1) in pairs
        assert ("fdr", 0.2) in pairs
        lasso = [lv for m, lv in pairs if m == "lasso"]
        assert len(lasso) == 1 and math.isnan(lasso[0])


class TestComputeMetrics:
    def test_hand_reduction(self):
        truths = {0: frozenset({1, 2}), 1: frozenset({1, 2})}
        cond = {0: 0.5, 1: 0.7}
        outs = [
            RepOutcome(replicate=0, method="fdr", level=0.1,
                       j_hat=frozenset({1, 2}), mse=0.2),
            RepOutcome(replicate=1, method="fdr", level=0.1,
                       j_hat=frozenset({1, 2, 3}), mse=0.4,
                       order_misses_truth=True),
        ]
        m = compute_metrics(outs, truths, cond, p=5)
        assert m.truth_rate == 0.5
        assert m.mean_inclusions == 2.5
        assert m.mean_correct_inclusions == 2.0
        assert m.mse == pytest.approx(0.3)
        assert m.delta_hat == 0.5
        assert m.m_conditioning == pytest.approx(0.6)
        assert m.n_used == 2 and m.n_errors == 0

    def test_all_errors_yield_nan_cell(self):
        outs = [RepOutcome(replicate=0, method="fdr", level=0.1,
                           error="RankDeficient: x")]
        m = compute_metrics(outs, {}, {}, p=5)
        assert m.n_used == 0 and m.n_errors == 1
        assert math.isnan(m.truth_rate) and math.isnan(m.mse)


class TestWorkerInvariance:
    def test_bytes_identical_across_worker_counts(self):
        c = parse_config(CONFIG_TEXT)
        m1, o1 = run_scenario(c, workers=1)
        m3, o3 = run_scenario(c, workers=3)
        assert metrics_to_csv(m1) == metrics_to_csv(m3)
        assert outcomes_to_jsonl(o1) == outcomes_to_jsonl(o3)


class TestCli:
    def test_simulate_end_to_end(self, tmp_path, capsys):
        cfg = tmp_path / "scenario.cfg"
        cfg.write_text(CONFIG_TEXT.replace("replications = 3",
                                           "replications = 2"))
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        for name in ("metrics.csv", "timings.csv", "replications.jsonl"):
            assert (out / name).exists()
        head = (out / "metrics.csv").read_text().splitlines()[0]
        assert head.startswith("method,level,truth_rate")
        assert "method,level" in capsys.readouterr().out

    def test_simulate_missing_config(self, tmp_path):
        rc = main(["simulate", "--config", str(tmp_path / "none.cfg"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_simulate_bad_config(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("n = 40\nwhat = 1\n")
        rc = main(["simulate", "--config", str(cfg),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_calibrate_writes_table(self, tmp_path):
        out = tmp_path / "table.csv"
        rc = main(["calibrate", "--mode", "P4", "--k", "1", "--n", "40",
                   "--p", "10", "--alpha", "0.1", "--n-mc", "300",
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "k,t,alpha_kt,threshold,n_mc,seed,tag"
        assert len(lines) > 1 and lines[1].endswith("P4")

    def test_select_from_csv(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        n, p = 50, 5
        X = rng.standard_normal((n, p))
        y = 4.0 * X[:, 1] + 0.5 * rng.standard_normal(n)
        rows = ["y," + ",".join(f"x{j}" for j in range(p))]
        for i in range(n):
            rows.append(",".join(repr(float(v)) for v in [y[i], *X[i]]))
        data = tmp_path / "data.csv"
        data.write_text("\n".join(rows) + "\n")
        rc = main(["select", "--data", str(data), "--method", "fdr",
                   "--alpha", "0.05"])
        assert rc == 0
        selected = [int(s) for s in capsys.readouterr().out.split()]
        assert 2 in selected  # column x1 is design column 2 (1-based)

    def test_argparse_failure_is_rc2(self):
        assert main(["simulate"]) == 2

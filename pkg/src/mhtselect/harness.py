"""Replication engine and command-line entry point.

``run_scenario`` generates synthetic sparse-regression datasets, applies the
requested selection methods at each level, and aggregates support-recovery
metrics.  Output is deterministic under a fixed seed regardless of the worker
count: every replication derives its own random stream and results are reduced
in replication order.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import baselines, calibrate, ordering, select_ordered, select_twostep, theory
from .design import DesignMatrix, gs_from_columns, make_model, model_support, \
    normalize_columns
from .errors import ConfigError, MhtError

KNOWN_METHODS = ("proc_ordered", "procpval", "procbol", "fdr", "fdr2",
                 "lasso", "bolasso")
DESIGN_FAMILIES = ("gaussian_normalized", "orthonormalized")


@dataclass(frozen=True)
class SimConfig:
    """One simulation scenario (a row group of the benchmark tables)."""

    n: int
    p: int
    k0_nonintercept: int
    beta_value: float
    design_family: str = "gaussian_normalized"
    methods: tuple = ("proc_ordered",)
    alpha_levels: tuple = (0.05,)
    q_levels: tuple = (0.05,)
    replications: int = 1
    seed: int = 0
    intercept_in_truth: bool = True
    mse_as_printed: bool = False
    n_mc: int = 1000
    n_boot: int = 100

    def __post_init__(self):
        if self.k0_nonintercept + 1 > self.p:
            raise ConfigError("k0_nonintercept + 1 must not exceed p")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.design_family not in DESIGN_FAMILIES:
            raise ConfigError(f"unknown design_family {self.design_family!r}")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.design_family == "orthonormalized" and self.p > self.n + 1:
            raise ConfigError("orthonormalized family needs p - 1 <= n")


@dataclass(frozen=True)
class SimMetrics:
    """Aggregated recovery metrics for one (method, level) cell."""

    method: str
    level: float
    truth_rate: float
    mean_inclusions: float
    mean_correct_inclusions: float
    mse: float
    delta_hat: float
    m_conditioning: float
    n_used: int
    n_errors: int
    walltime: float

    def __post_init__(self):
        if self.n_used:
            assert 0.0 <= self.truth_rate <= 1.0
            assert self.mean_correct_inclusions <= self.mean_inclusions


def generate_dataset(config: SimConfig, replicate_index: int):
    """Synthetic dataset for one replication, fully determined by
    (config.seed, replicate_index).

    Column 1 is the 1/sqrt(n) intercept; the rest are independent Gaussian
    vectors scaled to unit n-norm, optionally replaced by an orthonormal basis
    of their span.  The true support adds k0_nonintercept random non-intercept
    indices to the intercept; their coefficients all equal beta_value.
    """
    n, p = config.n, config.p
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed,
                               spawn_key=(0, replicate_index)))
    raw = rng.standard_normal((n, p - 1))
    if config.design_family == "orthonormalized":
        q, _ = np.linalg.qr(raw)
        cols = q * np.sqrt(n)
    else:
        cols = normalize_columns(raw).columns
    full = np.hstack([np.full((n, 1), 1.0 / np.sqrt(n)), cols])
    design = DesignMatrix(full, has_intercept=True)

    chosen = rng.choice(p - 1, size=config.k0_nonintercept, replace=False)
    relevant = sorted(int(j) + 2 for j in chosen)
    beta = np.zeros(p)
    beta[[j - 1 for j in relevant]] = config.beta_value
    support = {1} | set(relevant) if config.intercept_in_truth else set(relevant)
    model = make_model(design, beta, sigma=1.0, support=support)
    y = model.mu + rng.standard_normal(n)
    return design, y, model


@dataclass(frozen=True)
class RepOutcome:
    """Per-replication record for one (method, level) cell."""

    replicate: int
    method: str
    level: float
    j_hat: frozenset = frozenset()
    mse: float = float("nan")
    order_misses_truth: bool = False
    error: str = None
    elapsed: float = 0.0


def _method_levels(config: SimConfig):
    pairs = []
    for m in config.methods:
        if m in ("fdr", "fdr2"):
            levels = config.q_levels
        elif m in ("lasso", "bolasso"):
            levels = (float("nan"),)
        else:
            levels = config.alpha_levels
        pairs.extend((m, float(lv)) for lv in levels)
    return pairs


def _ordered_permutation(truth, p):
    head = sorted(truth)
    return head + [j for j in range(1, p + 1) if j not in truth]


def _apply_method(method, level, design, y, model, config, seed_seq):
    """Run one selector; returns (selected set, ordering-missed-truth flag)."""
    n, p = design.n, design.p
    truth = model_support(model)
    highdim = p >= n
    cal_seed = config.seed  # design-free tables shared across replications
    rep_seed = int(seed_seq.generate_state(1)[0])
    ortho_family = config.design_family == "orthonormalized"

    if method == "proc_ordered":
        perm = _ordered_permutation(truth, p)
        dperm = DesignMatrix(design.columns[:, [j - 1 for j in perm]],
                             has_intercept=(perm[0] == 1))
        res = select_ordered.run_ordered(
            y, dperm, level, procedure="P1",
            mode="highdim" if highdim else "lowdim",
            n_mc=config.n_mc, seed=cal_seed)
        return frozenset(perm[i - 1] for i in res.j_hat), False

    if method in ("procpval", "procbol"):
        if method == "procpval":
            order = ordering.order_by_pvalues(
                design, y, mode="marginal" if highdim else "full")
        else:
            order = ordering.order_by_bolasso(
                design, y, n_boot=config.n_boot,
                rng=np.random.default_rng(seed_seq.spawn(1)[0]))
        missed = set(order.prefix(len(truth))) != set(truth)
        plan = None
        if highdim:
            cols = design.columns[:, [j - 1 for j in order.order]]
            plan = select_twostep.highdim_adapt(order, gs_from_columns(cols))
        if ortho_family and not highdim:
            res = select_twostep.run_proc_b_ortho(
                y, design, order, level, n_mc=config.n_mc, seed=cal_seed)
        else:
            res = select_twostep.run_proc_b(
                y, design, order, level, n_mc=config.n_mc, seed=rep_seed,
                plan=plan)
        return res.j_hat, missed

    if method == "fdr":
        return baselines.select_fdr(design, y, level, mode="full").j_hat, False
    if method == "fdr2":
        return baselines.select_fdr(design, y, level, mode="marginal").j_hat, False
    if method == "lasso":
        return baselines.select_lasso_cv(
            design, y, rng=np.random.default_rng(seed_seq.spawn(1)[0])).j_hat, False
    if method == "bolasso":
        return baselines.select_bolasso_cv(
            design, y, n_boot=config.n_boot,
            rng=np.random.default_rng(seed_seq.spawn(1)[0])).j_hat, False
    raise ConfigError(f"unknown method {method!r}")


def _replication_mse(design, y, model, j_hat, as_printed):
    beta_hat = baselines.ols_refit(design, y, j_hat)
    resid = design.columns @ beta_hat - model.mu
    if as_printed:
        return float(np.sum(resid)) / design.n
    return float(np.sum(resid**2)) / design.n


def _run_replication(config: SimConfig, replicate: int, pairs):
    design, y, model = generate_dataset(config, replicate)
    truth = model_support(model)
    outcomes = []
    for mi, (method, level) in enumerate(pairs):
        seq = np.random.SeedSequence(entropy=config.seed,
                                     spawn_key=(1, replicate, mi))
        t0 = time.perf_counter()
        try:
            j_hat, missed = _apply_method(method, level, design, y, model,
                                          config, seq)
            mse = _replication_mse(design, y, model, j_hat,
                                   config.mse_as_printed)
            outcomes.append(RepOutcome(replicate=replicate, method=method,
                                       level=level, j_hat=j_hat, mse=mse,
                                       order_misses_truth=missed,
                                       elapsed=time.perf_counter() - t0))
        except MhtError as exc:
            outcomes.append(RepOutcome(replicate=replicate, method=method,
                                       level=level,
                                       error=f"{type(exc).__name__}: {exc}",
                                       elapsed=time.perf_counter() - t0))
    cond = float("nan")
    if design.p < design.n:
        xtx = design.columns.T @ design.columns
        cond = float(np.max(np.diag(np.linalg.inv(xtx)))) / design.n
    return truth, cond, outcomes


def compute_metrics(outcomes, truths, conditioning, p, walltime=0.0) -> SimMetrics:
    """Reduce one (method, level) cell's per-replication outcomes."""
    ok = [o for o in outcomes if o.error is None]
    n_err = len(outcomes) - len(ok)
    if not ok:
        nan = float("nan")
        o = outcomes[0]
        return SimMetrics(method=o.method, level=o.level, truth_rate=nan,
                          mean_inclusions=nan, mean_correct_inclusions=nan,
                          mse=nan, delta_hat=nan, m_conditioning=nan,
                          n_used=0, n_errors=n_err, walltime=walltime)
    exact = [o.j_hat == truths[o.replicate] for o in ok]
    sizes = [len(o.j_hat) for o in ok]
    correct = [len(o.j_hat & truths[o.replicate]) for o in ok]
    cond = [conditioning[o.replicate] for o in ok]
    return SimMetrics(
        method=ok[0].method, level=ok[0].level,
        truth_rate=float(np.mean(exact)),
        mean_inclusions=float(np.mean(sizes)),
        mean_correct_inclusions=float(np.mean(correct)),
        mse=float(np.mean([o.mse for o in ok])),
        delta_hat=float(np.mean([o.order_misses_truth for o in ok])),
        m_conditioning=float(np.mean(cond)),
        n_used=len(ok), n_errors=n_err, walltime=walltime)


def run_scenario(config: SimConfig, workers: int = 1):
    """All replications of one scenario.

    Returns (metrics rows, per-replication outcome rows).  Identical output
    for any worker count: replication streams are derived from the scenario
    seed alone and the reduction runs in replication order.
    """
    pairs = _method_levels(config)
    if workers <= 1:
        results = [_run_replication(config, r, pairs)
                   for r in range(config.replications)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _run_replication(config, r, pairs),
                                    range(config.replications)))

    truths = {r: res[0] for r, res in enumerate(results)}
    conditioning = {r: res[1] for r, res in enumerate(results)}
    flat = [o for _, _, outs in results for o in outs]
    metrics = []
    for method, level in pairs:
        cell = [o for o in flat if o.method == method
                and (o.level == level or (np.isnan(level) and np.isnan(o.level)))]
        metrics.append(compute_metrics(cell, truths, conditioning, config.p,
                                       walltime=sum(o.elapsed for o in cell)))
    return metrics, flat


def metrics_to_csv(metrics) -> str:
    # wall time deliberately kept out: this file must be byte-identical for a
    # fixed seed whatever the worker count
    lines = ["method,level,truth_rate,mean_inclusions,mean_correct_inclusions,"
             "mse,delta_hat,m_conditioning,n_used,errors"]
    for m in metrics:
        lines.append("%s,%s,%s,%s,%s,%s,%s,%s,%d,%d"
                     % (m.method, _fmt(m.level), _fmt(m.truth_rate),
                        _fmt(m.mean_inclusions),
                        _fmt(m.mean_correct_inclusions), _fmt(m.mse),
                        _fmt(m.delta_hat), _fmt(m.m_conditioning),
                        m.n_used, m.n_errors))
    return "\n".join(lines) + "\n"


def timings_to_csv(metrics) -> str:
    lines = ["method,level,walltime_s"]
    for m in metrics:
        lines.append("%s,%s,%.3f" % (m.method, _fmt(m.level), m.walltime))
    return "\n".join(lines) + "\n"


def outcomes_to_jsonl(outcomes) -> str:
    rows = []
    for o in outcomes:
        rows.append(json.dumps({
            "replicate": o.replicate, "method": o.method,
            "level": None if np.isnan(o.level) else o.level,
            "selected": sorted(o.j_hat),
            "mse": None if np.isnan(o.mse) else o.mse,
            "order_misses_truth": bool(o.order_misses_truth),
            "error": o.error}, sort_keys=True))
    return "\n".join(rows) + "\n"


def _fmt(x):
    return "nan" if np.isnan(x) else "%.17g" % x


# --- configuration files -----------------------------------------------------

_BOOL_KEYS = {"intercept_in_truth", "mse_as_printed"}
_LIST_KEYS = {"methods", "alpha_levels", "q_levels"}
_STR_KEYS = {"design_family"}
_INT_KEYS = {"n", "p", "k0_nonintercept", "replications", "seed", "n_mc",
             "n_boot"}


def parse_config(text) -> SimConfig:
    """Flat key=value scenario description; '#' starts a comment, lists are
    comma separated."""
    known = {f.name for f in fields(SimConfig)}
    kv = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        kv[key] = val
    try:
        conf = {}
        for key, val in kv.items():
            if key in _LIST_KEYS:
                items = tuple(s.strip() for s in val.split(",") if s.strip())
                conf[key] = items if key == "methods" else tuple(
                    float(s) for s in items)
            elif key in _BOOL_KEYS:
                if val.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(f"bad boolean {val!r}")
                conf[key] = val.lower() in ("true", "1")
            elif key in _INT_KEYS:
                conf[key] = int(val)
            elif key in _STR_KEYS:
                conf[key] = val
            else:
                conf[key] = float(val)
        return SimConfig(**conf)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --- CLI ---------------------------------------------------------------------


def _cmd_simulate(args):
    with open(args.config) as fh:
        config = parse_config(fh.read())
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    metrics, outcomes = run_scenario(config, workers=args.workers)
    out = args.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w", newline="\n") as fh:
        fh.write(metrics_to_csv(metrics))
    with open(os.path.join(out, "timings.csv"), "w", newline="\n") as fh:
        fh.write(timings_to_csv(metrics))
    with open(os.path.join(out, "replications.jsonl"), "w", newline="\n") as fh:
        fh.write(outcomes_to_jsonl(outcomes))
    sys.stdout.write(metrics_to_csv(metrics))
    return 0


def _load_data_csv(path):
    """First column is the response; the rest become the design (an exact
    intercept column is kept, others are rescaled to unit n-norm)."""
    table = np.genfromtxt(path, delimiter=",", names=True)
    names = list(table.dtype.names)
    mat = np.column_stack([table[c] for c in names])
    y, X = mat[:, 0], mat[:, 1:]
    n = X.shape[0]
    if np.allclose(X[:, 0], 1.0 / np.sqrt(n), atol=0, rtol=1e-12):
        body = normalize_columns(X[:, 1:]).columns
        cols = np.hstack([X[:, :1], body])
        return y, DesignMatrix(cols, has_intercept=True, names=tuple(names[1:]))
    return y, normalize_columns(X, names=tuple(names[1:]))


def _cmd_select(args):
    y, design = _load_data_csv(args.data)
    n, p = design.n, design.p
    if args.method == "proc_ordered":
        res = select_ordered.run_ordered(
            y, design, args.alpha, procedure="P1",
            mode="highdim" if p >= n else "lowdim", n_mc=args.n_mc,
            seed=args.seed)
        selected = sorted(res.j_hat)
    elif args.method in ("procpval", "procbol"):
        if args.method == "procpval":
            order = ordering.order_by_pvalues(
                design, y, mode="marginal" if p >= n else "full")
        else:
            order = ordering.order_by_bolasso(
                design, y, rng=np.random.default_rng(args.seed))
        plan = None
        if p >= n:
            cols = design.columns[:, [j - 1 for j in order.order]]
            plan = select_twostep.highdim_adapt(order, gs_from_columns(cols))
        if args.sigma is not None:
            res = select_twostep.run_proc_a(y, design, order, args.sigma,
                                            args.alpha, n_mc=args.n_mc,
                                            seed=args.seed, plan=plan)
        else:
            res = select_twostep.run_proc_b(y, design, order, args.alpha,
                                            n_mc=args.n_mc, seed=args.seed,
                                            plan=plan)
        selected = sorted(res.j_hat)
    elif args.method in ("fdr", "fdr2"):
        mode = "marginal" if args.method == "fdr2" or p >= n else "full"
        selected = sorted(baselines.select_fdr(design, y, args.alpha,
                                               mode=mode).j_hat)
    elif args.method == "lasso":
        selected = sorted(baselines.select_lasso_cv(
            design, y, rng=np.random.default_rng(args.seed)).j_hat)
    elif args.method == "bolasso":
        selected = sorted(baselines.select_bolasso_cv(
            design, y, rng=np.random.default_rng(args.seed)).j_hat)
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    sys.stdout.write(" ".join(str(j) for j in selected) + "\n")
    return 0


def _cmd_calibrate(args):
    if args.mode == "P1":
        table = calibrate.calibrate_p1(args.k, (args.n, args.p), args.alpha,
                                       args.n_mc, args.seed)
    elif args.mode == "P2":
        table = calibrate.calibrate_p2(args.k, (args.n, args.p), args.alpha)
    elif args.mode == "P4":
        table = calibrate.calibrate_p4(args.k, args.p, args.n, args.alpha,
                                       args.n_mc, args.seed)
    elif args.mode == "ZR":
        table = calibrate.calibrate_ortho_ratio(args.k, args.p, args.n,
                                                args.alpha, args.n_mc,
                                                args.seed)
    else:
        raise ConfigError("calibrate supports design-free modes P1/P2/P4/ZR")
    calibrate.tables_to_csv([table], args.out)
    return 0


def _cmd_bounds(args):
    with open(args.config) as fh:
        kv = dict(
            line.split("#", 1)[0].strip().split("=", 1)
            for line in fh
            if line.split("#", 1)[0].strip())
    try:
        n, p = int(kv["n"]), int(kv["p"])
        k0 = int(kv["k0"])
        alpha = float(kv.get("alpha", 0.05))
        gamma = float(kv.get("gamma", 0.05))
        sigma = float(kv.get("sigma", 1.0))
        beta_value = float(kv["beta_value"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bounds config needs n, p, k0, beta_value ({exc})")
    beta_sorted = (beta_value,) * k0
    reports = []
    for k in range(1, k0):
        cells = []
        for t in range(int(np.floor(np.log2(k0 - k))) + 1):
            if n - (k + 2**t) < 1:
                break
            sig = beta_value**2 * 2**t
            tail = beta_value**2 * max(k0 - (k + 2**t) + 1, 0)
            cells.append(theory.BoundInputs(
                n=n, p=p, k=k, k0=k0, t=t, alpha_kt=alpha, alpha=alpha,
                gamma=gamma, sigma=sigma, mu_proj=sig, mu_resid=tail,
                mu_nsq=beta_value**2 * k0, beta_sorted=beta_sorted))
        if not cells:
            continue
        reports.append(theory.check_rk(cells))
        reports.append(theory.check_r2(cells))
        reports.append(theory.check_r3(cells))
    sys.stdout.write(theory.report_to_csv(reports))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mhtselect",
        description="Variable selection by sequential multiple testing, with "
                    "a simulation benchmark harness.")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=1)
    sim.set_defaults(func=_cmd_simulate)

    sel = sub.add_parser("select", help="select variables from a data CSV")
    sel.add_argument("--data", required=True)
    sel.add_argument("--method", required=True)
    sel.add_argument("--alpha", type=float, default=0.05)
    sel.add_argument("--sigma", type=float, default=None)
    sel.add_argument("--n-mc", type=int, default=1000)
    sel.add_argument("--seed", type=int, default=0)
    sel.set_defaults(func=_cmd_select)

    cal = sub.add_parser("calibrate", help="emit a threshold table CSV")
    cal.add_argument("--mode", required=True)
    cal.add_argument("--k", type=int, required=True)
    cal.add_argument("--n", type=int, required=True)
    cal.add_argument("--p", type=int, required=True)
    cal.add_argument("--alpha", type=float, default=0.05)
    cal.add_argument("--n-mc", type=int, default=1000)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", required=True)
    cal.set_defaults(func=_cmd_calibrate)

    bnd = sub.add_parser("bounds", help="evaluate the power conditions")
    bnd.add_argument("--config", required=True)
    bnd.set_defaults(func=_cmd_bounds)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (MhtError, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numeric failure: {type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())

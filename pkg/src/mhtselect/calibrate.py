"""Monte-Carlo calibration of per-step level collections and thresholds.

Five schemes are implemented.  P1/P2 calibrate the ordered-selection sup-Fisher
test (P1 by simulating the infimum of Fisher p-values over the dyadic
alternatives, P2 by an even level split).  P3/P5 calibrate the two-step
procedures through the greedy noise-driven column permutation: a fresh noise
vector picks, step by step, the not-yet-chosen column whose residual direction
captures the most noise, and the resulting projection statistics stochastically
dominate the observed ones on the good-ordering event.  P4 and the Z-ratio
scheme are the orthonormal-design shortcuts, which depend only on (k, p, n).

Empirical quantiles are the order statistic at ceil(q * n_mc), a conservative
(higher-threshold) choice.  All tables rebuild bit-exact from (inputs, seed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .design import DesignMatrix, gs_from_columns
from .dists import (FisherParams, fisher_quantile, fisher_sf, sample_zdD,
                    sample_zdD_profile)
from .errors import DegenerateStep, RequiresPltN

_VALID_TAGS = ("P1", "P2", "P3", "P4", "P5", "ZR")

# soft cap on scratch memory for the batched greedy sampler (in doubles)
_GREEDY_BUDGET = 16_000_000


# ---------------------------------------------------------------------------
# dyadic alternative grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TGrid:
    """Usable alternative dimensions at step k: t in ts, D_t = 2^t,
    N_t = n - (k + 2^t) >= 1."""

    k: int
    ts: tuple
    D: tuple
    N: tuple

    def __len__(self):
        return len(self.ts)

    @property
    def max_dim(self) -> int:
        return max(self.D)


def t_grid(n: int, k: int, span_limit: int, highdim: bool = False) -> TGrid:
    """T_k for testing step k against a family whose usable span is
    ``span_limit`` columns (p in low dimension, a_p in high dimension).

    Low dimension: t_max = floor(log2(span_limit - k)); high dimension:
    t_max = floor(log2(span_limit - k - 1)).  Alternatives with no residual
    degree of freedom (N < 1) are dropped; DegenerateStep if none remain.
    """
    room = (span_limit - k - 1) if highdim else (span_limit - k)
    if room < 1:
        raise DegenerateStep(k, f"no alternative directions beyond step k={k}")
    t_max = int(math.floor(math.log2(room)))
    ts, Ds, Ns = [], [], []
    for t in range(t_max + 1):
        D = 2**t
        N = n - (k + D)
        if N >= 1:
            ts.append(t)
            Ds.append(D)
            Ns.append(N)
    if not ts:
        raise DegenerateStep(k)
    return TGrid(k=k, ts=tuple(ts), D=tuple(Ds), N=tuple(Ns))


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationTable:
    k: int
    levels: dict
    thresholds: dict
    n_mc: int
    seed: object
    procedure_tag: str

    def __post_init__(self):
        if self.procedure_tag not in _VALID_TAGS:
            raise ValueError(f"unknown procedure tag {self.procedure_tag!r}")
        for t, a in self.levels.items():
            if not 0.0 < a < 1.0:
                raise ValueError(f"level alpha[{t}]={a} outside (0,1)")
        for t, thr in self.thresholds.items():
            if not thr > 0.0:
                raise ValueError(f"threshold[{t}]={thr} must be positive")

    @property
    def ts(self) -> tuple:
        return tuple(sorted(self.levels))


@dataclass(frozen=True)
class NullSample:
    """Raw null draws behind a table: column t of ``draws`` holds the n_mc
    values of the statistic at alternative t."""

    statistic_tag: str
    ts: tuple
    draws: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("null draws must be finite and nonnegative")
        object.__setattr__(self, "draws", d)


def empirical_quantile(x, q: float) -> float:
    """Order statistic at ceil(q * len(x)), 1-based."""
    xs = np.sort(np.asarray(x, dtype=float))
    m = xs.size
    idx = min(m, max(1, math.ceil(q * m)))
    return float(xs[idx - 1])


def _plugin_levels(draws: np.ndarray, alpha: float):
    """Shared-level calibration from a null sample.

    Per draw, the plug-in survival of each column's value within its own
    column; alpha_k is the empirical alpha-quantile of the per-draw infimum
    over columns.  Returns (alpha_k, thresholds per column at 1 - alpha_k).
    """
    m, ncol = draws.shape
    if ncol == 1:
        alpha_k = alpha  # single alternative: no multiplicity correction
    else:
        surv = np.empty_like(draws)
        for j in range(ncol):
            col = draws[:, j]
            order = np.sort(col)
            # plug-in survival: fraction of the sample strictly above the value
            surv[:, j] = (m - np.searchsorted(order, col, side="right")) / m
        inf_surv = surv.min(axis=1)
        alpha_k = empirical_quantile(inf_surv, alpha)
        alpha_k = min(max(alpha_k, 0.5 / m), 1.0 - 0.5 / m)
    thresholds = [empirical_quantile(draws[:, j], 1.0 - alpha_k) for j in range(ncol)]
    return alpha_k, thresholds


# ---------------------------------------------------------------------------
# P1 / P2: ordered-selection Fisher calibration (design-free)
# ---------------------------------------------------------------------------

def calibrate_p1(k, design_dims, alpha, n_mc, seed, grid: TGrid = None) -> CalibrationTable:
    """Level collection for the sup-Fisher test at step k by simulating the
    infimum over t of the Fisher p-value of pure noise."""
    n, p = design_dims
    grid = t_grid(n, k, p) if grid is None else grid
    rng = np.random.default_rng(seed)
    if len(grid) == 1:
        alpha_k = alpha
    else:
        sq = rng.standard_normal((n_mc, n)) ** 2
        csum = np.cumsum(sq, axis=1)
        total = csum[:, -1]
        pvals = np.empty((n_mc, len(grid)))
        for j, (t, D, N) in enumerate(zip(grid.ts, grid.D, grid.N)):
            num = csum[:, k + D - 1] - csum[:, k - 1]
            den = total - csum[:, k + D - 1]
            stat = (N / D) * num / den
            pvals[:, j] = fisher_sf(FisherParams(D, N), stat)
        alpha_k = empirical_quantile(pvals.min(axis=1), alpha)
        alpha_k = min(max(alpha_k, 1e-12), 1.0 - 1e-12)
    levels = {t: alpha_k for t in grid.ts}
    thresholds = {t: fisher_quantile(FisherParams(D, N), alpha_k)
                  for t, D, N in zip(grid.ts, grid.D, grid.N)}
    return CalibrationTable(k=k, levels=levels, thresholds=thresholds,
                            n_mc=n_mc, seed=seed, procedure_tag="P1")


def calibrate_p2(k, design_dims, alpha, grid: TGrid = None) -> CalibrationTable:
    """Even Bonferroni split: alpha_{k,t} = alpha / |T_k|."""
    n, p = design_dims
    grid = t_grid(n, k, p) if grid is None else grid
    a = alpha / len(grid)
    levels = {t: a for t in grid.ts}
    thresholds = {t: fisher_quantile(FisherParams(D, N), a)
                  for t, D, N in zip(grid.ts, grid.D, grid.N)}
    return CalibrationTable(k=k, levels=levels, thresholds=thresholds,
                            n_mc=0, seed=None, procedure_tag="P2")


# ---------------------------------------------------------------------------
# greedy noise permutation and its projection statistics
# ---------------------------------------------------------------------------

def _greedy_noise_projections(X, prefix_basis, n_steps, eps, dep_tol=1e-8,
                              want_choices=False):
    """Batched greedy column selection driven by noise vectors.

    For each noise row of ``eps`` (shape (B, n)): residualize on the prefix
    span, then repeatedly pick the not-yet-chosen column whose residual
    direction (against everything selected so far) captures the largest
    squared noise projection.  Ties resolve to the smallest column index.

    Returns (c2, w0sq, valid, choices): ``c2[b, m]`` is the squared Euclidean
    projection of noise b on the m-th selected direction, ``w0sq[b]`` the
    squared norm of the prefix-residualized noise, ``valid[b]`` the number of
    well-conditioned steps, ``choices`` the 0-based selected column indices
    (only when requested).
    """
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    B = eps.shape[0]
    tol2 = (dep_tol**2) * n  # columns have squared Euclidean norm n
    kdim = prefix_basis.shape[1]

    c2 = np.zeros((B, n_steps))
    valid = np.full(B, n_steps, dtype=np.int64)
    choices = np.full((B, n_steps), -1, dtype=np.int64) if want_choices else None

    if kdim:
        Cpre = prefix_basis.T @ X                       # (kdim, p)
        norms2_0 = np.maximum(np.sum(X * X, axis=0) - np.sum(Cpre * Cpre, axis=0), 0.0)
        W = eps - (eps @ prefix_basis) @ prefix_basis.T
    else:
        norms2_0 = np.sum(X * X, axis=0)
        W = eps.astype(float, copy=True)
    w0sq = np.sum(W * W, axis=1)

    chunk = max(16, min(B, _GREEDY_BUDGET // max(1, n_steps * (p + n))))
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        _greedy_chunk(X, W[lo:hi], norms2_0, n_steps, tol2,
                      c2[lo:hi], valid[lo:hi],
                      choices[lo:hi] if want_choices else None)
    return c2, w0sq, valid, choices


def _greedy_chunk(X, W, norms2_0, n_steps, tol2, c2_out, valid_out, choices_out):
    n, p = X.shape
    B = W.shape[0]
    W = W.copy()
    norms2 = np.broadcast_to(norms2_0, (B, p)).copy()
    taken = np.zeros((B, p), dtype=bool)
    Q = np.empty((B, n, n_steps))       # selected directions, Euclidean-unit
    Cq = np.empty((B, n_steps, p))      # their inner products with all columns
    alive = np.ones(B, dtype=bool)
    rows = np.arange(B)
    for m in range(n_steps):
        proj = W @ X                    # == <W, residualized column> per column
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = np.where((norms2 > tol2) & ~taken, proj * proj / norms2, -1.0)
        choice = np.argmax(scores, axis=1)
        best = scores[rows, choice]
        newly_dead = alive & (best < 0)
        if newly_dead.any():
            valid_out[newly_dead] = m
            alive &= ~newly_dead
        if not alive.any():
            break
        c2_out[alive, m] = best[alive]
        if choices_out is not None:
            choices_out[alive, m] = choice[alive]
        taken[rows, choice] = True
        # residualize the chosen column against previously selected directions
        xsel = X[:, choice].T.copy()    # (B, n)
        if m:
            csel = np.take_along_axis(Cq[:, :m, :], choice[:, None, None], axis=2)[:, :, 0]
            xsel -= np.einsum("bnm,bm->bn", Q[:, :, :m], csel)
        rn = np.sqrt(np.sum(xsel * xsel, axis=1))
        rn[rn == 0] = 1.0
        e = xsel / rn[:, None]
        Q[:, :, m] = e
        ce = e @ X
        Cq[:, m, :] = ce
        norms2 = np.maximum(norms2 - ce * ce, 0.0)
        W -= np.sum(W * e, axis=1)[:, None] * e
        c2_out[~alive, m] = 0.0


def sigma1_permutation(design: DesignMatrix, k: int, ordered_prefix, rng) -> tuple:
    """Greedy noise-driven permutation of {1, ..., p}: the first k slots are
    the given ordered prefix; each later slot takes the not-yet-chosen column
    whose residual direction captures the most of a fresh noise draw."""
    rng = np.random.default_rng(rng)
    prefix = tuple(int(j) for j in ordered_prefix)
    if len(set(prefix)) != len(prefix) or len(prefix) != k:
        raise ValueError("ordered_prefix must hold k distinct indices")
    X = design.columns
    n, p = X.shape
    if k:
        state = gs_from_columns(X[:, [j - 1 for j in prefix]])
        prefix_basis = state.basis / math.sqrt(n)  # Euclidean-unit
    else:
        prefix_basis = np.empty((n, 0))
    eps = rng.standard_normal((1, n))
    _, _, valid, choices = _greedy_noise_projections(
        X, prefix_basis, p - k, eps, want_choices=True)
    out = list(prefix)
    for m in range(int(valid[0])):
        out.append(int(choices[0, m]) + 1)
    # dependent leftovers (measure-zero for generic designs): smallest first
    for j in range(1, p + 1):
        if j not in out:
            out.append(j)
    return tuple(out)


def _prefix_basis(design_cols, ordered_prefix):
    n = design_cols.shape[0]
    idx = [int(j) - 1 for j in ordered_prefix]
    if not idx:
        return np.empty((n, 0))
    state = gs_from_columns(design_cols[:, idx])
    return state.basis / math.sqrt(n)


def _greedy_null_stats(design, k, ordered_prefix, n_mc, seed, grid: TGrid):
    """Null-draw matrices for P3 (projection statistic) and P5 (Fisher-type
    ratio) from one batch of greedy permutations; a fresh noise vector drives
    both the permutation and the statistic of each draw."""
    X = design.columns if isinstance(design, DesignMatrix) else np.asarray(design, float)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    eb = _prefix_basis(X, ordered_prefix)
    eps = rng.standard_normal((n_mc, n))
    n_steps = grid.max_dim
    c2, w0sq, valid, _ = _greedy_noise_projections(X, eb, n_steps, eps)
    cs = np.cumsum(c2, axis=1)
    u1 = np.empty((n_mc, len(grid)))
    ups = np.empty((n_mc, len(grid)))
    for j, (t, D, N) in enumerate(zip(grid.ts, grid.D, grid.N)):
        s = cs[:, D - 1]
        u1[:, j] = s / n
        resid = np.maximum(w0sq - s, 1e-300)
        ups[:, j] = (N / D) * s / resid
    return u1, ups


def calibrate_p3(design, k, ordered_prefix, alpha, n_mc, seed,
                 grid: TGrid = None) -> CalibrationTable:
    """Variance-known two-step calibration: thresholds are plug-in quantiles of
    the greedy projection statistic at the calibrated shared level."""
    p = design.p if isinstance(design, DesignMatrix) else np.asarray(design).shape[1]
    n = design.n if isinstance(design, DesignMatrix) else np.asarray(design).shape[0]
    grid = t_grid(n, k, p) if grid is None else grid
    u1, _ = _greedy_null_stats(design, k, ordered_prefix, n_mc, seed, grid)
    alpha_k, thr = _plugin_levels(u1, alpha)
    return CalibrationTable(k=k, levels={t: alpha_k for t in grid.ts},
                            thresholds=dict(zip(grid.ts, thr)),
                            n_mc=n_mc, seed=seed, procedure_tag="P3")


def calibrate_p5(design, k, ordered_prefix, alpha, n_mc, seed,
                 grid: TGrid = None) -> CalibrationTable:
    """Variance-unknown two-step calibration via the greedy Fisher-type ratio."""
    p = design.p if isinstance(design, DesignMatrix) else np.asarray(design).shape[1]
    n = design.n if isinstance(design, DesignMatrix) else np.asarray(design).shape[0]
    grid = t_grid(n, k, p) if grid is None else grid
    _, ups = _greedy_null_stats(design, k, ordered_prefix, n_mc, seed, grid)
    alpha_k, thr = _plugin_levels(ups, alpha)
    return CalibrationTable(k=k, levels={t: alpha_k for t in grid.ts},
                            thresholds=dict(zip(grid.ts, thr)),
                            n_mc=n_mc, seed=seed, procedure_tag="P5")


# ---------------------------------------------------------------------------
# orthonormal-design shortcuts (design-free null statistics)
# ---------------------------------------------------------------------------

def calibrate_p4(k, p, n, alpha, n_mc, seed, grid: TGrid = None) -> CalibrationTable:
    """Orthonormal variance-known calibration: null statistic is the sum of the
    D_t largest squared normals among p - k, divided by n."""
    grid = t_grid(n, k, p) if grid is None else grid
    rng = np.random.default_rng(seed)
    prof = sample_zdD_profile(p - k, rng, size=n_mc)
    draws = np.column_stack([prof[:, D - 1] / n for D in grid.D])
    alpha_k, thr = _plugin_levels(draws, alpha)
    return CalibrationTable(k=k, levels={t: alpha_k for t in grid.ts},
                            thresholds=dict(zip(grid.ts, thr)),
                            n_mc=n_mc, seed=seed, procedure_tag="P4")


def sample_ortho_ratio(k, t, p, n, rng) -> float:
    """One draw of the orthonormal unknown-variance bound:
    (N/D) * Z_{D, p-k} / (L_{k,D} + K_{n-p}) with D = 2^t, N = n - (k + D).

    Z is the sum of the D largest squared values among p - k standard
    normals (worst-case numerator of a data-driven ordering); L is the sum of
    the p - k - D smallest squared values among p ordered normals, which
    understates the matching residual tail, keeping the ratio conservative.
    """
    if p >= n:
        raise RequiresPltN("the ratio bound needs p < n")
    rng = np.random.default_rng(rng)
    D = 2**t
    N = n - (k + D)
    if N < 1:
        raise DegenerateStep(k)
    z = sample_zdD(D, p - k, rng)
    i2 = np.sort(rng.standard_normal(p) ** 2)[::-1]
    ell = float(i2[k + D:].sum())
    kk = float(rng.chisquare(n - p))
    return (N / D) * z / (ell + kk)


def calibrate_ortho_ratio(k, p, n, alpha, n_mc, seed, grid: TGrid = None) -> CalibrationTable:
    """Threshold table for the orthonormal unknown-variance ratio bound; one
    ordered-normal draw per replicate serves every t."""
    if p >= n:
        raise RequiresPltN("the ratio bound needs p < n")
    grid = t_grid(n, k, p) if grid is None else grid
    rng = np.random.default_rng(seed)
    zprof = sample_zdD_profile(p - k, rng, size=n_mc)
    i2 = np.sort(rng.standard_normal((n_mc, p)) ** 2, axis=1)[:, ::-1]
    cs = np.cumsum(i2, axis=1)
    total = cs[:, -1]
    kchi = rng.chisquare(n - p, size=n_mc)
    draws = np.empty((n_mc, len(grid)))
    for j, (t, D, N) in enumerate(zip(grid.ts, grid.D, grid.N)):
        z = zprof[:, D - 1]
        ell = total - cs[:, k + D - 1]
        draws[:, j] = (N / D) * z / (ell + kchi)
    alpha_k, thr = _plugin_levels(draws, alpha)
    return CalibrationTable(k=k, levels={t: alpha_k for t in grid.ts},
                            thresholds=dict(zip(grid.ts, thr)),
                            n_mc=n_mc, seed=seed, procedure_tag="ZR")


# ---------------------------------------------------------------------------
# cache and serialization
# ---------------------------------------------------------------------------

_TABLE_CACHE = {}


def cached_table(tag, k, p, n, alpha, n_mc, seed, highdim_limit=None) -> CalibrationTable:
    """Build-or-fetch a design-free table (P1, P2, P4 or ZR).  P3/P5 depend on
    the realized design and ordering and are never shared across runs."""
    key = (tag, k, p, n, alpha, n_mc, seed, highdim_limit)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        limit = p if highdim_limit is None else highdim_limit
        grid = t_grid(n, k, limit, highdim=highdim_limit is not None)
        if tag == "P1":
            tab = calibrate_p1(k, (n, p), alpha, n_mc, seed, grid=grid)
        elif tag == "P2":
            tab = calibrate_p2(k, (n, p), alpha, grid=grid)
        elif tag == "P4":
            tab = calibrate_p4(k, p, n, alpha, n_mc, seed, grid=grid)
        elif tag == "ZR":
            tab = calibrate_ortho_ratio(k, p, n, alpha, n_mc, seed, grid=grid)
        else:
            raise ValueError(f"tag {tag!r} is not cacheable")
        _TABLE_CACHE[key] = tab
    return tab


def clear_table_cache():
    _TABLE_CACHE.clear()


def tables_to_csv(tables, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "alpha_kt", "threshold", "n_mc", "seed", "tag"])
        for tab in tables:
            for t in tab.ts:
                w.writerow([tab.k, t, repr(float(tab.levels[t])), repr(float(tab.thresholds[t])),
                            tab.n_mc, "" if tab.seed is None else tab.seed,
                            tab.procedure_tag])


def tables_from_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for rec in r:
            key = (int(rec["k"]), rec["tag"])
            ent = rows.setdefault(key, {"levels": {}, "thresholds": {},
                                        "n_mc": int(rec["n_mc"]),
                                        "seed": int(rec["seed"]) if rec["seed"] else None})
            t = int(rec["t"])
            ent["levels"][t] = float(rec["alpha_kt"])
            ent["thresholds"][t] = float(rec["threshold"])
    return [CalibrationTable(k=k, levels=v["levels"], thresholds=v["thresholds"],
                             n_mc=v["n_mc"], seed=v["seed"], procedure_tag=tag)
            for (k, tag), v in sorted(rows.items())]

"""Power-condition evaluators for the selection procedures.

Each ``check_*`` function evaluates one sufficient condition under which the
corresponding procedure recovers the true support with probability at least
1 - (gamma + alpha [+ delta]).  The conditions compare a signal-strength term
(left) against an explicit noise-level term (right); a condition holds when
some admissible alternative dimension 2^t makes left >= right.

The evaluators are exact formula transcriptions; nothing here is estimated.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import AssumptionViolated

EXACT_SUBSET_LIMIT = 12


@dataclass(frozen=True)
class BoundInputs:
    """Scalar inputs for one (k, t) cell of a power condition.

    mu_proj is ||P_S mu||_n^2 for the ordered condition and the infimum of
    that norm over d-subsets of the true support for the two-step conditions;
    mu_resid is ||P_{V_perp} mu||_n^2; mu_nsq is ||mu||_n^2.  beta_sorted,
    when given, holds the nonzero coefficients sorted by increasing magnitude
    and feeds the orthonormal-design specializations.
    """

    n: int
    p: int
    k: int
    k0: int
    t: int
    alpha_kt: float
    alpha: float
    gamma: float
    sigma: float
    mu_proj: float = 0.0
    mu_resid: float = 0.0
    mu_nsq: float = 0.0
    beta_sorted: tuple = ()
    proj_exact: bool = True

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.gamma < 1):
            raise ValueError("alpha and gamma must lie in (0, 1)")
        if not 0 < self.alpha_kt < 1:
            raise ValueError("alpha_kt must lie in (0, 1)")
        if not self.k < self.k0 <= self.p:
            raise ValueError("need k < k0 <= p")
        if self.t < 0 or self.dim_den < 1:
            raise ValueError("t outside the usable grid")

    @property
    def dim_num(self):
        return 2**self.t

    @property
    def dim_den(self):
        return self.n - (self.k + 2**self.t)


@dataclass(frozen=True)
class ReportRow:
    k: int
    t: int
    left: float
    right: float

    @property
    def margin(self):
        return self.left - self.right

    @property
    def holds(self):
        return self.left >= self.right


@dataclass(frozen=True)
class BoundReport:
    """Per-t margins for one condition at step k; satisfied when any t works."""

    condition: str
    rows: tuple
    exact: bool = True

    @property
    def satisfied(self):
        return any(r.holds for r in self.rows)

    @property
    def best_margin(self):
        return max(r.margin for r in self.rows)


def constants_c123(k, t, n, alpha_kt, gamma):
    """Constants weighting the residual-signal and noise terms of the ordered
    condition.  They stay O(1) when alpha_kt >= exp(-N/10), gamma >=
    2 exp(-N/21) and (D + log(1/alpha_kt))/N stays bounded."""
    D = 2**t
    N = n - (k + D)
    if N < 1:
        raise ValueError("denominator dimension must be positive")
    lt = np.log(1.0 / alpha_kt)
    ll = np.log(2.0 / gamma)
    mt = 2.0 * np.exp(4.0 * lt / N)

    def kt(u):
        return 1.0 + 2.0 * np.sqrt(u / N) + 2.0 * mt * u / N

    c1 = 2.5 * (1.0 + max(kt(lt), mt)) * (D + lt) / N
    c2 = 2.5 * np.sqrt(1.0 + kt(ll) ** 2) * (1.0 + np.sqrt(D / N))
    c3 = 2.5 * max(mt * kt(ll) / 2.0, 5.0) * (1.0 + 2.0 * D / N)
    return c1, c2, c3


def _rk_right(b: BoundInputs):
    c1, c2, c3 = constants_c123(b.k, b.t, b.n, b.alpha_kt, b.gamma)
    lg = np.log(2.0 * b.k0 / (b.alpha_kt * b.gamma))
    noise = c2 * np.sqrt(b.dim_num * lg) + c3 * lg
    return c1 * b.mu_resid + (b.sigma**2 / b.n) * noise


def check_rk(inputs) -> BoundReport:
    """Ordered-selection power condition at step k (variance known order)."""
    cells = _as_cells(inputs)
    rows = tuple(ReportRow(k=b.k, t=b.t, left=b.mu_proj, right=_rk_right(b))
                 for b in cells)
    return BoundReport(condition="rk", rows=rows,
                       exact=all(b.proj_exact for b in cells))


def _r2_right(b: BoundInputs):
    D = b.dim_num
    n_tests = int(np.floor(np.log2(b.p - b.k))) + 1
    lg = np.log(b.k0 * n_tests / (b.gamma * b.alpha))
    head = (D / b.n) * (10.0 + 4.0 * np.log((b.p - b.k) * b.k0 / D**2))
    return head + (2.0 / b.n) * (np.sqrt(2.0 * D * lg) + lg)


def _check_twostep_t(b: BoundInputs):
    if b.t > np.log2(b.k0 - b.k):
        raise ValueError("alternative dimension exceeds the remaining support")


def check_r2(inputs) -> BoundReport:
    """Two-step known-variance condition: the subset-infimum signal beats the
    union-bound noise level."""
    cells = _as_cells(inputs)
    rows = []
    for b in cells:
        _check_twostep_t(b)
        rows.append(ReportRow(k=b.k, t=b.t,
                              left=b.mu_proj / (2.0 * b.sigma**2),
                              right=_r2_right(b)))
    return BoundReport(condition="r2", rows=tuple(rows),
                       exact=all(b.proj_exact for b in cells))


def check_r2bis(inputs) -> BoundReport:
    """Orthonormal-design form of check_r2 with the sorted-coefficient sum."""
    cells = _as_cells(inputs)
    rows = []
    for b in cells:
        _check_twostep_t(b)
        left = _smallest_beta_sum(b) / (2.0 * b.sigma**2)
        rows.append(ReportRow(k=b.k, t=b.t, left=left, right=_r2_right(b)))
    return BoundReport(condition="r2bis", rows=tuple(rows))


def ratio_bound_terms(k, t, n, p, alpha):
    """Scale factors (lam1, lam2, lam3, a) controlling the calibrated
    greedy-ratio threshold at step k, dimension 2^t."""
    D = 2**t
    N = n - (k + D)
    if N < 1:
        raise ValueError("denominator dimension must be positive")
    n_tests = int(np.floor(np.log2(p - k))) + 1
    lt = np.log(n_tests / alpha)
    mt = np.exp(4.0 * lt / N)
    mp = np.exp((4.0 * D / N) * np.log(np.e * (p - k) / D))
    big_m = 2.0 * mt * mp
    lam1 = np.sqrt(1.0 + D / N)
    lam2 = (1.0 + 2.0 * D / N) * big_m
    lam3 = 2.0 * lam1 + lam2
    a = D * (2.0 + D / N + lam3 * np.log(np.e * (p - k) / D))
    a += (1.0 + lam2) * np.log((np.log2(p - k) + 1.0) / alpha)
    return lam1, lam2, lam3, a


def _r3_right(b: BoundInputs, signal_tail):
    _, _, _, a = ratio_bound_terms(b.k, b.t, b.n, b.p, b.alpha)
    D = b.dim_num
    lgk = np.log(2.0 * b.k0 / b.gamma)
    first = (a / b.dim_den) * (signal_tail
                               + b.sigma**2 * (2.0 + 3.0 * lgk / b.n))
    rest = (b.sigma**2 / b.n) * (D * (6.0 + 4.0 * np.log(b.k0 / D))
                                 + 3.0 * lgk)
    return first + rest


def check_r3(inputs) -> BoundReport:
    """Two-step unknown-variance condition (calibrated ratio statistic)."""
    cells = _as_cells(inputs)
    rows = []
    for b in cells:
        _check_twostep_t(b)
        rows.append(ReportRow(k=b.k, t=b.t, left=b.mu_proj / 2.0,
                              right=_r3_right(b, b.mu_nsq)))
    return BoundReport(condition="r3", rows=tuple(rows),
                       exact=all(b.proj_exact for b in cells))


def check_r3bis(inputs) -> BoundReport:
    """Orthonormal-design form of check_r3: sorted-coefficient sums replace
    the projection norms."""
    cells = _as_cells(inputs)
    rows = []
    for b in cells:
        _check_twostep_t(b)
        beta = np.asarray(b.beta_sorted, dtype=float)
        if beta.size != b.k0:
            raise ValueError("beta_sorted must list the k0 nonzero coefficients")
        left = _smallest_beta_sum(b) / (2.0 * b.sigma**2)
        tail = float(np.sum(beta[b.k + b.dim_num - 1:] ** 2))
        rows.append(ReportRow(k=b.k, t=b.t, left=left,
                              right=_r3_right(b, tail)))
    return BoundReport(condition="r3bis", rows=tuple(rows))


@dataclass(frozen=True)
class SimplifiedBound:
    """Compact surrogate c * 2^t [log(p-k)/N + log(k0)/n] for the full
    unknown-variance noise level; c is reported, not assumed."""

    shape: float
    full: float

    @property
    def c_value(self):
        return self.full / self.shape

    @property
    def bound(self):
        return self.c_value * self.shape


def simplified_r3_bound(b: BoundInputs) -> SimplifiedBound:
    if not (b.dim_num <= (b.n - b.k) / 2.0 and np.log(b.p - b.k) > 1.0):
        raise AssumptionViolated(
            "need 2^t <= (n-k)/2 and log(p-k) > 1 for the compact form")
    shape = b.dim_num * (np.log(b.p - b.k) / b.dim_den + np.log(b.k0) / b.n)
    return SimplifiedBound(shape=shape, full=_r3_right(b, b.mu_nsq))


def _smallest_beta_sum(b: BoundInputs):
    beta = np.asarray(b.beta_sorted, dtype=float)
    if beta.size != b.k0:
        raise ValueError("beta_sorted must list the k0 nonzero coefficients")
    if np.any(np.diff(np.abs(beta)) < 0):
        raise ValueError("beta_sorted must be sorted by increasing magnitude")
    return float(np.sum(beta[: b.dim_num] ** 2))


def _as_cells(inputs):
    if isinstance(inputs, BoundInputs):
        return (inputs,)
    cells = tuple(inputs)
    if not cells:
        raise ValueError("no cells to evaluate")
    return cells


def subset_projection_inf(design, model, d, exact_limit=EXACT_SUBSET_LIMIT):
    """Infimum of ||P_span(X_I) mu||_n^2 over d-subsets I of the true support.

    Exact enumeration of the C(k0, d) subsets when k0 <= exact_limit;
    otherwise only the d smallest-coefficient columns are tried, which gives a
    heuristic value reported with exact=False.
    """
    support = np.array(sorted(model.support), dtype=int)
    k0 = support.size
    if not 1 <= d <= k0:
        raise ValueError("subset size out of range")
    mu = model.mu
    n = design.n
    if k0 <= exact_limit:
        subsets = combinations(support, d)
        exact = True
    else:
        order = np.argsort(np.abs(model.beta[support - 1]))
        subsets = [tuple(support[order[:d]])]
        exact = False
    best = np.inf
    for idx in subsets:
        cols = design.columns[:, np.asarray(idx) - 1]
        q, _ = np.linalg.qr(cols)
        best = min(best, float(np.sum((q.T @ mu) ** 2) / n))
    return best, exact


def report_to_csv(reports) -> str:
    """Serialize one report or a sequence of them, one line per (k, t)."""
    if isinstance(reports, BoundReport):
        reports = (reports,)
    lines = ["condition,k,t,left,right,margin,holds,exact"]
    for rep in reports:
        for r in rep.rows:
            lines.append("%s,%d,%d,%.17g,%.17g,%.17g,%d,%d"
                         % (rep.condition, r.k, r.t, r.left, r.right,
                            r.margin, int(r.holds), int(rep.exact)))
    return "\n".join(lines) + "\n"

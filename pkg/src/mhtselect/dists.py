"""Distribution kernels: Fisher survival/quantile functions, the chi-square
deviation bound, the closed-form Fisher-quantile upper bound, and the
order-statistic functional Z_{d,D} used by orthonormal-design calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class FisherParams:
    """Degrees of freedom of an F variable: numerator D, denominator N."""

    d_num: int
    d_den: int

    def __post_init__(self):
        if self.d_num < 1 or self.d_den < 1:
            raise ValueError("degrees of freedom must be >= 1")


def fisher_sf(params: FisherParams, x) -> float:
    """P(F_{D,N} > x), via the regularized incomplete beta function."""
    D, N = params.d_num, params.d_den
    x = np.asarray(x, dtype=float)
    out = special.betainc(N / 2.0, D / 2.0, N / (N + D * x))
    return float(out) if out.ndim == 0 else out


def fisher_quantile(params: FisherParams, alpha: float) -> float:
    """x with P(F_{D,N} > x) = alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    D, N = params.d_num, params.d_den
    # invert through the beta quantile: P(F > x) = I_{N/(N+Dx)}(N/2, D/2)
    b = special.betaincinv(N / 2.0, D / 2.0, alpha)
    if b <= 0.0:
        return math.inf
    return float((N / b - N) / D)


def chisq_tail_bound(d: int, x: float) -> float:
    """Deviation level d + 2*sqrt(d*x) + 2*x: P(chi2_d >= bound) <= exp(-x)."""
    if d < 1:
        raise ValueError("d must be a positive integer")
    if x < 0:
        raise ValueError("x must be nonnegative")
    return d + 2.0 * math.sqrt(d * x) + 2.0 * x


def fisher_quantile_upper_bound(params: FisherParams, u: float) -> float:
    """Closed-form upper bound of the (1-u) Fisher quantile.

    Returns B/D where
    B = D + 2*sqrt(D*(1+D/N)*log(1/u)) + (1+2D/N)*(N/2)*(exp(4*log(1/u)/N) - 1),
    which always dominates fisher_quantile(params, u).
    """
    if not 0.0 < u < 1.0:
        raise ValueError("u must be in (0, 1)")
    D, N = params.d_num, params.d_den
    l = math.log(1.0 / u)
    b = (D
         + 2.0 * math.sqrt(D * (1.0 + D / N) * l)
         + (1.0 + 2.0 * D / N) * (N / 2.0) * math.expm1(4.0 * l / N))
    return b / D


def sample_zdD(d: int, D: int, rng: np.random.Generator) -> float:
    """One draw of Z_{d,D}: sum of the d largest squared values among D
    independent standard normals."""
    if not 1 <= d <= D:
        raise ValueError("need 1 <= d <= D")
    w2 = rng.standard_normal(D) ** 2
    if d == D:
        return float(w2.sum())
    top = np.partition(w2, D - d)[D - d:]
    return float(top.sum())


def sample_zdD_profile(D: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """(size, D) array whose [i, d-1] entry is Z_{d,D} for one underlying draw;
    rows are cumulative sums of descending squared normals."""
    w2 = rng.standard_normal((size, D)) ** 2
    w2.sort(axis=1)
    return np.cumsum(w2[:, ::-1], axis=1)

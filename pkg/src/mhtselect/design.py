"""Design-matrix data model and linear-algebra services.

All norms here are the scaled norm ||s||_n^2 = sum_i s_i^2 / n and the matching
inner product <x, y>_n = x.y / n.  Columns of a valid design have ||X_j||_n = 1;
the intercept column is the constant vector 1/sqrt(n).  Orthonormalization is
incremental Gram-Schmidt (with reorthogonalization) so that nested projection
norms are cheap prefix sums of squared coefficients.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import RankUnreachable, ZeroColumn

NORM_TOL = 1e-10
DEFAULT_DEPENDENCE_TOL = 1e-8

_CACHE_MAGIC = b"MHTD"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class DesignMatrix:
    """n x p predictor matrix with unit-n-norm columns.

    ``columns`` is the (n, p) array; column j (0-based) is X_{j+1} in the usual
    1-based indexing.  ``has_intercept`` records that column 0 is 1/sqrt(n).
    """

    columns: np.ndarray
    has_intercept: bool = False
    names: tuple = None

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        object.__setattr__(self, "columns", cols)
        cols.setflags(write=False)
        norms = np.sum(cols**2, axis=0) / self.n
        # the intercept keeps its conventional 1/sqrt(n) entries (Euclidean
        # unit) and is exempt from the n-norm constraint
        start = 1 if self.has_intercept else 0
        if not np.allclose(norms[start:], 1.0, atol=NORM_TOL, rtol=0.0):
            bad = start + int(np.argmax(np.abs(norms[start:] - 1.0)))
            raise ValueError(f"column {bad} is not unit n-norm (got {norms[bad]!r})")
        if self.has_intercept:
            if not np.all(cols[:, 0] == cols[0, 0]) or not np.isclose(
                cols[0, 0], 1.0 / np.sqrt(self.n), atol=0, rtol=1e-12
            ):
                raise ValueError("intercept column must equal 1/sqrt(n) componentwise")

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Column X_j, 1-based."""
        return self.columns[:, j - 1]


@dataclass(frozen=True)
class OrthoState:
    """Incremental Gram-Schmidt state.

    ``basis`` is (n, m) with unit-n-norm, pairwise n-orthogonal columns.
    ``source_index`` maps each basis vector to the (0-based) processed-column
    index that generated it.  ``rank_profile`` holds a_s, the span dimension
    after each processed column; steps are 0 or 1.
    """

    n: int
    basis: np.ndarray
    source_index: tuple
    rank_profile: tuple

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def n_processed(self) -> int:
        return len(self.rank_profile)


def empty_ortho_state(n: int) -> OrthoState:
    return OrthoState(n=n, basis=np.empty((n, 0)), source_index=(), rank_profile=())


def ninner(x, y, n=None):
    """<x, y>_n."""
    x = np.asarray(x)
    if n is None:
        n = x.shape[0]
    return float(np.dot(x, y)) / n


def nnorm_sq(x, n=None):
    x = np.asarray(x)
    if n is None:
        n = x.shape[0]
    return float(np.dot(x, x)) / n


def normalize_columns(raw_matrix, has_intercept=False, names=None) -> DesignMatrix:
    """Rescale each column to unit n-norm; raises ZeroColumn on a null column."""
    raw = np.asarray(raw_matrix, dtype=float)
    if raw.ndim != 2:
        raise ValueError("expected a 2-d array")
    n = raw.shape[0]
    norms = np.sqrt(np.sum(raw**2, axis=0))
    for j, v in enumerate(norms):
        if v < 1e-12:
            raise ZeroColumn(j + 1)
    cols = raw / (norms / np.sqrt(n))
    if has_intercept:
        # rebuild exactly to satisfy the componentwise-equality invariant
        cols = cols.copy()
        cols[:, 0] = 1.0 / np.sqrt(n)
    return DesignMatrix(columns=cols, has_intercept=has_intercept,
                        names=tuple(names) if names is not None else None)


def _orthogonalize(basis: np.ndarray, column: np.ndarray, n: int):
    """Residual of ``column`` against ``basis`` with one reorthogonalization pass."""
    r = column.astype(float, copy=True)
    if basis.shape[1]:
        for _ in range(2):
            r -= basis @ (basis.T @ r) / n
    return r


def gs_extend(state: OrthoState, column, dependence_tol: float = DEFAULT_DEPENDENCE_TOL) -> OrthoState:
    """Extend the Gram-Schmidt state with one column.

    The residual is appended (normalized) when its norm exceeds
    ``dependence_tol`` times the column norm; otherwise the basis is unchanged
    and the rank profile repeats its last value.
    """
    column = np.asarray(column, dtype=float)
    n = state.n
    if column.shape != (n,):
        raise ValueError(f"column must have length {n}")
    r = _orthogonalize(state.basis, column, n)
    col_norm = np.sqrt(nnorm_sq(column, n))
    res_norm = np.sqrt(nnorm_sq(r, n))
    last = state.rank_profile[-1] if state.rank_profile else 0
    if col_norm > 0 and res_norm > dependence_tol * col_norm:
        e = r / res_norm
        basis = np.concatenate([state.basis, e[:, None]], axis=1)
        return OrthoState(n=n, basis=basis,
                          source_index=state.source_index + (state.n_processed,),
                          rank_profile=state.rank_profile + (last + 1,))
    return OrthoState(n=n, basis=state.basis, source_index=state.source_index,
                      rank_profile=state.rank_profile + (last,))


def gs_from_columns(columns, dependence_tol: float = DEFAULT_DEPENDENCE_TOL) -> OrthoState:
    """Gram-Schmidt over all columns of an (n, p) array, in order."""
    cols = np.asarray(columns, dtype=float)
    n, p = cols.shape
    basis = np.empty((n, min(n, p)))
    source = []
    profile = []
    m = 0
    for j in range(p):
        c = cols[:, j]
        r = c.copy()
        if m:
            for _ in range(2):
                r -= basis[:, :m] @ (basis[:, :m].T @ r) / n
        col_norm = np.sqrt(np.dot(c, c) / n)
        res_norm = np.sqrt(np.dot(r, r) / n)
        if col_norm > 0 and res_norm > dependence_tol * col_norm and m < n:
            basis[:, m] = r / res_norm
            source.append(j)
            m += 1
        profile.append(m)
    return OrthoState(n=n, basis=basis[:, :m].copy(), source_index=tuple(source),
                      rank_profile=tuple(profile))


def project_coeffs(y, state: OrthoState) -> np.ndarray:
    """n-inner products of y with every basis vector."""
    y = np.asarray(y, dtype=float)
    return state.basis.T @ y / state.n


def project_sq_norm(y, state: OrthoState, start: int = 0, stop: int = None) -> float:
    """||Pi_S y||_n^2 for S spanned by basis[start:stop]."""
    stop = state.rank if stop is None else stop
    if start < 0 or stop > state.rank or start > stop:
        raise IndexError("basis slice out of bounds")
    c = state.basis[:, start:stop].T @ np.asarray(y, dtype=float) / state.n
    return float(np.dot(c, c))


@dataclass(frozen=True)
class RankIndices:
    """s_k and q_{k,t} resolvers derived from a rank profile."""

    rank_profile: tuple

    @property
    def max_rank(self) -> int:
        return self.rank_profile[-1] if self.rank_profile else 0

    def s(self, k: int) -> int:
        """First s (1-based) with a_s = k."""
        if k == 0:
            return 0
        for s, a in enumerate(self.rank_profile, start=1):
            if a == k:
                return s
        raise RankUnreachable(k)

    def q(self, k: int, t: int) -> int:
        """Smallest q with dim span(residualized X_{s_k+1..s_k+q}) = 2^t."""
        target = k + 2**t
        sk = self.s(k)
        if target > self.max_rank:
            raise RankUnreachable(target)
        return self.s(target) - sk


def rank_indices(state: OrthoState) -> RankIndices:
    return RankIndices(rank_profile=state.rank_profile)


# ---------------------------------------------------------------------------
# I/O: CSV (header row of names) and a small versioned binary cache
# ---------------------------------------------------------------------------

def design_to_csv(design: DesignMatrix, path):
    names = design.names or tuple(f"X{j}" for j in range(1, design.p + 1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in design.columns:
            w.writerow([repr(float(v)) for v in row])


def design_from_csv(path, has_intercept=False) -> DesignMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        names = next(r)
        rows = [[float(v) for v in row] for row in r if row]
    return normalize_columns(np.array(rows), has_intercept=has_intercept, names=names)


def design_to_cache(design: DesignMatrix, path):
    """Binary cache: magic 'MHTD', u8 version, u8 intercept flag, u32 n, u32 p,
    then n*p little-endian float64 in row-major order."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<BBII", _CACHE_VERSION, int(design.has_intercept),
                             design.n, design.p))
        fh.write(np.ascontiguousarray(design.columns, dtype="<f8").tobytes())


def design_from_cache(path) -> DesignMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CACHE_MAGIC:
            raise ValueError("not a design cache file")
        version, flag, n, p = struct.unpack("<BBII", fh.read(10))
        if version != _CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        data = np.frombuffer(fh.read(8 * n * p), dtype="<f8").reshape(n, p)
    return DesignMatrix(columns=data.copy(), has_intercept=bool(flag))


@dataclass(frozen=True)
class Model:
    """Ground-truth sparse linear model: mu = sum_{j in J} beta_j X_j."""

    beta: np.ndarray
    sigma: float
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))

    @property
    def support(self) -> frozenset:
        """J = {j : beta_j != 0}, 1-based."""
        return frozenset(int(j) + 1 for j in np.flatnonzero(self.beta))

    @property
    def k0(self) -> int:
        return len(self.support)


def make_model(design: DesignMatrix, beta, sigma=1.0, support=None) -> Model:
    """Build a Model, optionally forcing the declared support (indices whose
    coefficient may be zero but are counted relevant, e.g. the intercept)."""
    beta = np.asarray(beta, dtype=float)
    mu = design.columns @ beta
    m = Model(beta=beta, sigma=float(sigma), mu=mu)
    if support is not None:
        object.__setattr__(m, "_forced_support", frozenset(int(j) for j in support))
    return m


def model_support(model: Model) -> frozenset:
    """Declared support: forced set if present, else nonzero coefficients."""
    forced = getattr(model, "_forced_support", None)
    return forced if forced is not None else model.support

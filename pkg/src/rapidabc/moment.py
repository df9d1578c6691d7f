"""Moment estimation, the Cholesky moment-matching transform, and the
P-th order empirical moment error used to benchmark the tuning parameter."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import cholesky

MOMENT_GUARD = 1e-12


class MomentGuardError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_moments(cls, mean, cov) -> "MomentSummary":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(mean, cov, cholesky(cov))


def _as_samples(X) -> np.ndarray:
    if hasattr(X, "particles"):
        X = X.particles
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def empirical_moments(particles) -> MomentSummary:
    """Sample mean and unbiased (M - 1 denominator) covariance."""
    X = _as_samples(particles)
    m = X.shape[0]
    if m < 2:
        raise ValueError("at least two particles are required")
    mu = X.mean(axis=0)
    d = X - mu
    cov = d.T @ d / (m - 1)
    return MomentSummary.from_moments(mu, cov)


def moment_match_transform(source, src: MomentSummary, tgt: MomentSummary) -> np.ndarray:
    """theta' = L_tgt [L_src^{-1} (theta - mu_src)] + mu_tgt for every source particle."""
    X = _as_samples(source)
    if X.shape[1] != src.mean.size or src.mean.size != tgt.mean.size:
        raise ValueError("dimension mismatch")
    if np.any(np.diag(src.chol) <= 0):
        raise np.linalg.LinAlgError("source Cholesky factor is singular")
    z = solve_triangular(src.chol, (X - src.mean).T, lower=True)
    return (tgt.chol @ z).T + tgt.mean


@lru_cache(maxsize=None)
def multi_indices(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    """All b in N^n with sum(b) == m, in lexicographically descending order."""
    if n == 1:
        return ((m,),)
    out = []
    for first in range(m, -1, -1):
        for rest in multi_indices(n - 1, m - first):
            out.append((first, *rest))
    return tuple(out)


def num_multi_indices(n: int, m: int) -> int:
    return comb(m + n - 1, n - 1)


def raw_moment(X, b) -> float:
    """(1/M) sum_i prod_k x_{ik}^{b_k}."""
    X = _as_samples(X)
    b = np.asarray(b, dtype=int)
    if X.shape[0] == 0:
        raise ValueError("sample set is empty")
    if b.shape != (X.shape[1],) or np.any(b < 0):
        raise ValueError("multi-index must be non-negative with one entry per dimension")
    return float(np.mean(np.prod(X**b, axis=1)))


def moment_error(X, Y, P: int) -> float:
    """Relative raw-moment mismatch of ``Y`` against reference ``X`` up to order ``P``.

    Each order m contributes sum over |b| = m of ((mu_X^b - mu_Y^b) / mu_X^b)^2,
    scaled by 1 / |S_m|^m.
    """
    X = _as_samples(X)
    Y = _as_samples(Y)
    n = X.shape[1]
    if Y.shape[1] != n:
        raise ValueError("sample sets differ in dimension")
    if P < 0:
        raise ValueError("P must be non-negative")
    total = 0.0
    for m in range(P + 1):
        size = num_multi_indices(n, m)
        acc = 0.0
        for b in multi_indices(n, m):
            ref = raw_moment(X, b)
            if abs(ref) < MOMENT_GUARD:
                raise MomentGuardError(f"reference raw moment for b={b} is ~0 ({ref:.3g})")
            acc += ((ref - raw_moment(Y, b)) / ref) ** 2
        total += acc / size**m
    return total


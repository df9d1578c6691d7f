"""Adaptive multivariate Gaussian proposal kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

JITTER = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    pass


def cholesky(S) -> np.ndarray:
    """Lower Cholesky factor of symmetric ``S``.

    A plain factorization is tried first. On failure ``1e-10 * max(max(diag), 1)``
    is added to the diagonal and the factorization retried once.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-12 * np.max(np.abs(S), initial=0.0):
        raise ValueError("matrix must be symmetric")
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER * max(float(np.max(np.diag(S))), 1.0)
    try:
        return np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("matrix is not positive definite after jitter") from exc


@dataclass(frozen=True)
class GaussianKernel:
    covariance: np.ndarray
    chol: np.ndarray
    log_norm_const: float

    @classmethod
    def from_covariance(cls, cov) -> "GaussianKernel":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        L = cholesky(cov)
        n = cov.shape[0]
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        lnc = -0.5 * (n * math.log(2 * math.pi) + logdet)
        cov.setflags(write=False)
        L.setflags(write=False)
        return cls(cov, L, lnc)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def sample(self, center, rng: np.random.Generator) -> np.ndarray:
        center = np.asarray(center, dtype=float)
        if center.shape != (self.dim,):
            raise ValueError(f"center must have shape ({self.dim},)")
        return center + self.chol @ rng.standard_normal(self.dim)

    def logpdf(self, theta, centers) -> np.ndarray | float:
        """Log density of ``theta - center`` for one center or a stack of them."""
        theta = np.asarray(theta, dtype=float)
        centers = np.asarray(centers, dtype=float)
        diff = theta - centers
        if diff.shape[-1] != self.dim:
            raise ValueError("dimension mismatch")
        z = solve_triangular(self.chol, np.atleast_2d(diff).T, lower=True)
        out = self.log_norm_const - 0.5 * np.sum(z * z, axis=0)
        return float(out[0]) if diff.ndim == 1 else out

    def pdf(self, theta, centers):
        return np.exp(self.logpdf(theta, centers))

    def log_mixture(self, theta, centers, weights) -> float:
        """log sum_j weights[j] * K(theta | centers[j]), accumulated in log space."""
        weights = np.asarray(weights, dtype=float)
        return float(logsumexp(self.logpdf(theta, centers), b=weights))


def adapt_kernel(particles) -> GaussianKernel:
    """Kernel with covariance 2/(M-1) * sum (theta_i - mu)(theta_i - mu)^T.

    The formula is unweighted; callers pass resampled (uniform) populations.
    """
    if hasattr(particles, "particles"):
        particles = particles.particles
    X = np.asarray(particles, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("at least two particles are needed to adapt a kernel")
    return GaussianKernel.from_covariance(2.0 * np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1]))


def kernel_sample(kernel: GaussianKernel, center, rng) -> np.ndarray:
    return kernel.sample(center, rng)


def kernel_density(kernel: GaussianKernel, theta, center) -> float:
    return float(np.exp(kernel.logpdf(theta, center)))

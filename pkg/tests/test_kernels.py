import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapidabc.kernels import (
    FactorizationError,
    GaussianKernel,
    adapt_kernel,
    cholesky,
    kernel_density,
    kernel_sample,
)


def test_adapt_kernel_is_twice_the_sample_covariance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    mu = X.mean(axis=0)
    expected = 2.0 / (len(X) - 1) * sum(np.outer(x - mu, x - mu) for x in X)
    np.testing.assert_allclose(adapt_kernel(X).covariance, expected, rtol=1e-12)


def test_adapt_kernel_one_dimensional():
    k = adapt_kernel(np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(k.covariance, [[2.0]])


def test_adapt_kernel_needs_two_particles():
    with pytest.raises(ValueError):
        adapt_kernel(np.zeros((1, 2)))


def test_cholesky_jitters_rank_deficient_matrix():
    L = cholesky(np.ones((2, 2)))
    assert np.all(np.diag(L) > 0)
    np.testing.assert_allclose(L @ L.T, np.ones((2, 2)), atol=1e-8)


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(FactorizationError):
        cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_pdf_at_center_is_normalizing_constant():
    k = GaussianKernel.from_covariance(np.diag([0.5, 2.0]))
    assert math.isclose(kernel_density(k, [1.0, 1.0], [1.0, 1.0]),
                        1.0 / (2 * math.pi * math.sqrt(1.0)), rel_tol=1e-12)


def test_pdf_matches_scalar_gaussian():
    k = GaussianKernel.from_covariance([[4.0]])
    x = 1.3
    expected = math.exp(-0.5 * x**2 / 4.0) / math.sqrt(2 * math.pi * 4.0)
    assert math.isclose(float(k.pdf([x], [0.0])), expected, rel_tol=1e-12)


def test_samples_have_target_covariance():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    k = GaussianKernel.from_covariance(cov)
    rng = np.random.default_rng(1)
    draws = np.array([kernel_sample(k, np.zeros(2), rng) for _ in range(20_000)])
    np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, atol=0.06)


def test_log_mixture_equals_direct_sum():
    k = GaussianKernel.from_covariance(np.diag([0.3, 0.7]))
    centers = np.array([[0.0, 0.0], [1.0, -1.0], [0.5, 2.0]])
    w = np.array([0.2, 0.3, 0.5])
    theta = np.array([0.4, 0.1])
    direct = sum(wj * k.pdf(theta, c) for wj, c in zip(w, centers))
    assert math.isclose(math.exp(k.log_mixture(theta, centers, w)), direct, rel_tol=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_pdf_symmetric_in_theta_and_center(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    k = GaussianKernel.from_covariance(A @ A.T + 0.1 * np.eye(n))
    a, b = rng.normal(size=n), rng.normal(size=n)
    assert math.isclose(float(k.pdf(a, b)), float(k.pdf(b, a)), rel_tol=1e-10)


def test_cholesky_worked_example():
    S = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = cholesky(S)
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)
    np.testing.assert_allclose(L @ L.T, S, atol=1e-12)


def test_adapt_kernel_two_points():
    # mean 1, sample variance 2, kernel covariance 4
    np.testing.assert_allclose(adapt_kernel(np.array([[0.0], [2.0]])).covariance, [[4.0]])


def test_adapt_kernel_collinear_particles_factorize():
    X = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    k = adapt_kernel(X)
    assert np.linalg.matrix_rank(k.covariance, tol=1e-8) == 1
    assert np.all(np.diag(k.chol) > 0)
    np.testing.assert_allclose(k.chol @ k.chol.T, k.covariance, atol=1e-8)


def test_one_dimensional_sample_variance():
    k = GaussianKernel.from_covariance([[4.0]])
    rng = np.random.default_rng(7)
    draws = np.array([k.sample(np.zeros(1), rng)[0] for _ in range(100_000)])
    assert 3.9 <= draws.var() <= 4.1


def test_two_dimensional_sample_covariance_within_four_se():
    S = np.array([[4.0, 2.0], [2.0, 3.0]])
    k = GaussianKernel.from_covariance(S)
    rng = np.random.default_rng(8)
    n = 20_000
    draws = np.array([k.sample(np.zeros(2), rng) for _ in range(n)])
    C = np.cov(draws, rowvar=False)
    for i in range(2):
        for j in range(2):
            se = math.sqrt((S[i, i] * S[j, j] + S[i, j] ** 2) / n)
            assert abs(C[i, j] - S[i, j]) < 4 * se


def test_pdf_against_analytic_two_by_two_inverse():
    a, b, d = 4.0, 2.0, 3.0
    det = a * d - b * b
    inv = np.array([[d, -b], [-b, a]]) / det
    x = np.array([1.0, 1.0])
    expected = math.exp(-0.5 * x @ inv @ x) / (2 * math.pi * math.sqrt(det))
    k = GaussianKernel.from_covariance([[a, b], [b, d]])
    assert math.isclose(float(k.pdf(x, np.zeros(2))), expected, rel_tol=1e-12)


@settings(max_examples=30)
@given(st.lists(st.lists(st.integers(-20, 20), min_size=2, max_size=2), min_size=3, max_size=12))
def test_adapt_kernel_exact_on_integer_particles(rows):
    from fractions import Fraction

    X = np.array(rows, dtype=float)
    m = len(rows)
    mu = [Fraction(sum(r[k] for r in rows), m) for k in range(2)]
    for a in range(2):
        for b in range(2):
            s = sum((r[a] - mu[a]) * (r[b] - mu[b]) for r in rows)
            expected = 2 * s / (m - 1)
            got = adapt_kernel(X).covariance[a, b]
            assert abs(Fraction(got) - expected) <= abs(expected) * Fraction(1, 10**12)


def test_density_integrates_to_one():
    k1 = GaussianKernel.from_covariance([[2.0]])
    x = np.linspace(-6 * math.sqrt(2), 6 * math.sqrt(2), 4001)
    assert abs(np.trapezoid(k1.pdf(x[:, None], np.zeros(1)), x) - 1.0) < 1e-3
    S = np.array([[1.0, 0.3], [0.3, 0.5]])
    k2 = GaussianKernel.from_covariance(S)
    gx = np.linspace(-6, 6, 401)
    gy = np.linspace(-6 * math.sqrt(0.5), 6 * math.sqrt(0.5), 401)
    XX, YY = np.meshgrid(gx, gy, indexing="ij")
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    vals = k2.pdf(pts, np.zeros(2)).reshape(XX.shape)
    assert abs(np.trapezoid(np.trapezoid(vals, gy, axis=1), gx) - 1.0) < 1e-3


@settings(max_examples=40)
@given(st.integers(0, 2**31))
def test_pdf_symmetry_is_exact(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    k = GaussianKernel.from_covariance(A @ A.T + 0.1 * np.eye(3))
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert kernel_density(k, a, b) == kernel_density(k, b, a)

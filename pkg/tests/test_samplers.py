import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ks_critical, ks_statistic, naive_importance_weight
from rapidabc.core import (
    STREAM_EXACT,
    BoxPrior,
    Streams,
    ThresholdSchedule,
    WeightedPopulation,
    read_population_csv,
)
from rapidabc.experiments import toy_biased_model, toy_identity_model
from rapidabc.kernels import GaussianKernel
from rapidabc.samplers import (
    APPROX,
    EXACT,
    AttemptCapError,
    ConfigError,
    Discrepancy,
    MmConfig,
    Model,
    abc_rejection,
    importance_weight,
    importance_weights,
    mm_smc_abc,
    pc_smc_abc,
    rejection_report,
    smc_abc,
)


def noisy(theta, rng):
    return np.array([theta[0] + 0.05 * rng.standard_normal()])


def noisy_shifted(theta, rng):
    return np.array([theta[0] + 0.05 + 0.05 * rng.standard_normal()])


EXACT_MODEL = Model(noisy, EXACT, "noisy")
CHEAP_MODEL = Model(noisy_shifted, APPROX, "noisy-shifted")
PRIOR = BoxPrior([0.0], [1.0])
RHO = Discrepancy(np.array([0.5]))
SCHED = ThresholdSchedule((0.2, 0.1, 0.05))


def test_model_rejects_unknown_cost_class():
    with pytest.raises(ValueError):
        Model(noisy, "free")


def test_discrepancy_applies_summary_to_both_sides():
    rho = Discrepancy(np.array([1.0, 3.0]), summary=lambda x: np.array([np.mean(x)]))
    assert rho(np.array([2.0, 2.0])) == 0.0


def test_mm_split_examples():
    assert MmConfig(0.1).split(1000) == (100, 900)
    assert MmConfig(0.3).split(10) == (3, 7)
    assert MmConfig(0.25).split(10) == (3, 7)
    assert MmConfig(1.0).split(50) == (50, 0)
    with pytest.raises(ConfigError):
        MmConfig(1.5)


@settings(max_examples=60)
@given(st.floats(0.0, 1.0), st.integers(2, 5000))
def test_mm_split_covers_population(alpha, M):
    m_hat, m_tilde = MmConfig(alpha).split(M)
    assert m_hat + m_tilde in (M, M + 1)
    assert 0 <= m_tilde <= M


def test_importance_weights_match_naive_oracle():
    rng = np.random.default_rng(4)
    prev = WeightedPopulation(rng.random((30, 2)), rng.random(30) + 0.1)
    cov = np.array([[0.02, 0.005], [0.005, 0.03]])
    kernel = GaussianKernel.from_covariance(cov)
    prior = BoxPrior([0.0, 0.0], [1.0, 1.0])
    thetas = rng.random((5, 2))
    got = importance_weights(thetas, prev, kernel, prior, chunk=2)
    for t, g in zip(thetas, got):
        ref = naive_importance_weight(t, prev.particles, prev.weights, cov, 1.0)
        assert math.isclose(g, ref, rel_tol=1e-10)
        assert math.isclose(importance_weight(t, prev, kernel, prior), ref, rel_tol=1e-10)


def test_importance_weight_zero_outside_prior():
    prev = WeightedPopulation.uniform(np.array([[0.5], [0.6]]))
    kernel = GaussianKernel.from_covariance([[0.01]])
    assert importance_weight([1.5], prev, kernel, PRIOR) == 0.0
    assert importance_weights(np.array([[1.5], [0.5]]), prev, kernel, PRIOR)[0] == 0.0


def test_rejection_accepts_within_epsilon_and_replays():
    rep = rejection_report(EXACT_MODEL, PRIOR, RHO, 0.05, 50, seed=3)
    pop = rep.final
    assert pop.size == 50
    assert np.all(np.abs(pop.particles[:, 0] - 0.5) < 0.05 + 0.05 * 5)
    # Replay particle 7 from its stored attempt index.
    attempt = int(rep.accepted["rejection"][0][7])
    rng = Streams(3).rng(STREAM_EXACT, 1, 7, attempt)
    theta = PRIOR.sample(rng)
    np.testing.assert_array_equal(theta, pop.particles[7])
    assert RHO(EXACT_MODEL.simulate(theta, rng)) <= 0.05
    assert rep.exact_sim_count == sum(int(a) + 1 for a in rep.accepted["rejection"][0])


def test_rejection_is_deterministic():
    a = abc_rejection(EXACT_MODEL, PRIOR, RHO, 0.1, 20, seed=11)
    b = abc_rejection(EXACT_MODEL, PRIOR, RHO, 0.1, 20, seed=11)
    np.testing.assert_array_equal(a.particles, b.particles)


def test_attempt_cap_raises():
    with pytest.raises(AttemptCapError):
        abc_rejection(EXACT_MODEL, PRIOR, Discrepancy(np.array([5.0])), 0.01, 2, seed=0,
                      max_attempts=50)


def test_smc_basic_properties():
    rep = smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 300, seed=1)
    assert len(rep.levels) == 3
    assert [p.epsilon for p in rep.levels] == list(SCHED.epsilons)
    assert rep.approx_sim_count == 0
    assert rep.exact_sim_count == sum(s["simulations"] for s in rep.level_stats)
    assert all(s["max_distance"] <= s["epsilon"] for s in rep.level_stats)
    assert abs(rep.final.mean()[0] - 0.5) < 0.02
    np.testing.assert_allclose(rep.final.normalized_weights().sum(), 1.0)


def test_smc_is_a_pure_function_of_seed():
    a = smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 100, seed=5)
    b = smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 100, seed=5)
    c = smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 100, seed=6)
    np.testing.assert_array_equal(a.final.particles, b.final.particles)
    assert a.exact_sim_count == b.exact_sim_count
    assert not np.array_equal(a.final.particles, c.final.particles)


def test_smc_config_errors():
    with pytest.raises(ConfigError):
        smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 1, seed=0)
    with pytest.raises(ValueError):
        smc_abc(EXACT_MODEL, PRIOR, RHO, (0.1, 0.2), 10, seed=0)


def test_pc_counts_both_models_and_stores_preconditioner():
    rep = pc_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 200, seed=2)
    assert rep.exact_sim_count > 0 and rep.approx_sim_count > 0
    stages = {s["stage"]: s["sim_kind"] for s in rep.level_stats}
    assert stages == {"preconditioner": "approx", "correction": "exact"}
    assert len(rep.extra_populations["preconditioner"]) == 3
    assert abs(rep.final.mean()[0] - 0.5) < 0.03


def test_mm_alpha_one_equals_smc():
    a = mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 100, 1.0, seed=8)
    b = smc_abc(EXACT_MODEL, PRIOR, RHO, SCHED, 100, seed=8)
    np.testing.assert_array_equal(a.final.particles, b.final.particles)
    assert a.approx_sim_count == 0
    assert a.exact_sim_count == b.exact_sim_count


def test_mm_pooled_masses_and_sizes():
    rep = mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 200, MmConfig(0.2), seed=4)
    assert rep.meta == {"alpha": 0.2, "m_hat": 40, "m_tilde": 160}
    for pooled in rep.extra_populations["pooled"]:
        w = pooled.normalized_weights()
        assert pooled.size == 200
        assert math.isclose(w[:40].sum(), 0.2, rel_tol=1e-12)
        assert math.isclose(w[40:].sum(), 0.8, rel_tol=1e-12)
    assert all(p.size == 200 for p in rep.levels)
    assert any(s["stage"] == "approx-run" for s in rep.level_stats)


def test_mm_transformed_population_matches_exact_moments():
    rep = mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 200, 0.2, seed=4)
    for pooled, moved in zip(rep.extra_populations["pooled"],
                             rep.extra_populations["transformed"]):
        exact = pooled.particles[:40, 0]
        np.testing.assert_allclose(moved.particles[:, 0].mean(), exact.mean(), atol=1e-12)
        np.testing.assert_allclose(moved.particles[:, 0].std(ddof=1), exact.std(ddof=1),
                                   rtol=1e-10)


def test_mm_config_errors():
    with pytest.raises(ConfigError):
        mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 10, 0.1, seed=0)
    with pytest.raises(ConfigError):
        mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 20, 0.95, seed=0)


def test_report_write(tmp_path):
    rep = mm_smc_abc(EXACT_MODEL, CHEAP_MODEL, PRIOR, RHO, SCHED, 50, 0.5, seed=1)
    written = rep.write(tmp_path, ["theta"])
    names = {p.name for p in written}
    assert "report.json" in names
    assert {"population_level3.csv", "pooled_level1.csv", "transformed_level2.csv"} <= names
    pop, cols = read_population_csv(tmp_path / "population_level3.csv")
    assert cols == ["theta"]
    np.testing.assert_array_equal(pop.particles, rep.final.particles)


IDENT = toy_identity_model()
BIASED = toy_biased_model()


def rejection_oracle(M=1000, seed=99):
    return abc_rejection(IDENT, PRIOR, RHO, 0.05, M, seed=seed).particles[:, 0]


def test_identity_acceptance_rate():
    # Accepted interval [0.4, 0.6] has prior mass 0.2.
    rep = rejection_report(IDENT, PRIOR, RHO, 0.1, 2000, seed=0)
    rate = 2000 / rep.exact_sim_count
    assert rep.exact_sim_count > 9000
    assert abs(rate - 0.2) < 4 * math.sqrt(0.2 * 0.8 / rep.exact_sim_count)


def test_three_particle_denominator_matches_loop():
    prev = WeightedPopulation([[0.2], [0.5], [0.7]], [0.2, 0.5, 0.3])
    kernel = GaussianKernel.from_covariance([[0.04]])
    theta = 0.45
    den = 0.0
    for x, w in zip([0.2, 0.5, 0.7], [0.2, 0.5, 0.3]):
        den += w * math.exp(-0.5 * (theta - x) ** 2 / 0.04) / math.sqrt(2 * math.pi * 0.04)
    assert math.isclose(importance_weight([theta], prev, kernel, PRIOR), 1.0 / den,
                        rel_tol=1e-12)


def check_against_rejection(x):
    ref = rejection_oracle()
    se = math.sqrt(x.var(ddof=1) / x.size + ref.var(ddof=1) / ref.size)
    assert abs(x.mean() - ref.mean()) < 3 * se
    assert ks_statistic(x, ref) < ks_critical(x.size, ref.size, 0.01)


def test_smc_identity_matches_rejection_oracle():
    rep = smc_abc(IDENT, PRIOR, RHO, SCHED, 1000, seed=21)
    x = rep.final.particles[:, 0]
    assert np.all((x >= 0.45) & (x <= 0.55))
    assert abs(x.mean() - 0.5) < 3 * x.std(ddof=1) / math.sqrt(x.size)
    check_against_rejection(x)


def test_pc_with_biased_preconditioner_matches_rejection_oracle():
    rep = pc_smc_abc(IDENT, BIASED, PRIOR, RHO, SCHED, 1000, seed=22)
    check_against_rejection(rep.final.particles[:, 0])


def test_mm_with_biased_model_matches_rejection_oracle():
    rep = mm_smc_abc(IDENT, BIASED, PRIOR, RHO, SCHED, 1000, 0.2, seed=23)
    x = rep.extra_populations["pooled"][-1]
    ref = rejection_oracle()
    mean = x.mean()[0]
    se = math.sqrt(x.std()[0] ** 2 / x.size + ref.var(ddof=1) / ref.size)
    assert abs(mean - ref.mean()) < 3 * se


def test_report_counts_equal_attempt_sums():
    rep = smc_abc(IDENT, PRIOR, RHO, SCHED, 200, seed=3)
    # Identity proposals outside [0, 1] are rejected before simulating, so compare per level.
    for stats, attempts in zip(rep.level_stats, rep.accepted["smc"]):
        assert stats["simulations"] == int(np.sum(attempts + 1)) - stats["prior_rejections"]
    assert rep.exact_sim_count == sum(s["simulations"] for s in rep.level_stats)


def test_single_level_smc_matches_rejection():
    # One level starts from the prior, so it is plain rejection with different streams.
    rep = smc_abc(IDENT, PRIOR, RHO, ThresholdSchedule((0.05,)), 1000, seed=31)
    check_against_rejection(rep.final.particles[:, 0])


@pytest.mark.slow
def test_pc_and_smc_agree_over_paired_runs():
    smc_mu, smc_sd, pc_mu, pc_sd = [], [], [], []
    for seed in range(20):
        a = smc_abc(IDENT, PRIOR, RHO, SCHED, 300, seed=100 + seed).final
        b = pc_smc_abc(IDENT, BIASED, PRIOR, RHO, SCHED, 300, seed=200 + seed).final
        smc_mu.append(a.mean()[0]); smc_sd.append(a.std()[0])
        pc_mu.append(b.mean()[0]); pc_sd.append(b.std()[0])
    for x, y in ((smc_mu, pc_mu), (smc_sd, pc_sd)):
        x, y = np.array(x), np.array(y)
        se = math.sqrt(x.var(ddof=1) / x.size + y.var(ddof=1) / y.size)
        assert abs(x.mean() - y.mean()) < 3 * se


@pytest.mark.parametrize("alpha", [0.1, 0.3])
def test_mm_exact_count_scales_with_alpha(alpha):
    ratios = []
    for seed in range(3):
        ref = smc_abc(IDENT, PRIOR, RHO, SCHED, 400, seed=40 + seed)
        mm = mm_smc_abc(IDENT, BIASED, PRIOR, RHO, SCHED, 400, alpha, seed=40 + seed)
        ratios.append(mm.exact_sim_count / ref.exact_sim_count)
    assert all(0.5 * alpha <= r <= 2 * alpha for r in ratios), ratios

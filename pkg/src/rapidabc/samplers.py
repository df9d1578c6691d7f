"""ABC rejection, SMC-ABC, preconditioned SMC-ABC and moment-matching SMC-ABC.

All samplers are generic over a :class:`Model` (anything with
``simulate(theta, rng)`` and a ``cost_class``) and a :class:`Discrepancy`
already bound to the observed data. Every random draw comes from a stream
keyed by ``(stage, level, particle, attempt)``, so a run is a pure function
of its seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .core import (
    STREAM_APPROX,
    STREAM_APPROX_RUN,
    STREAM_EXACT,
    STREAM_INIT,
    STREAM_RESAMPLE,
    BoxPrior,
    Streams,
    ThresholdSchedule,
    WeightedPopulation,
    euclidean_discrepancy,
    multinomial_resample,
    write_population_csv,
)
from .kernels import GaussianKernel, adapt_kernel
from .moment import empirical_moments, moment_match_transform

EXACT = "exact-expensive"
APPROX = "approximate-cheap"
MAX_ATTEMPTS = 10**5


class AttemptCapError(RuntimeError):
    """A Repeat-Until loop hit its proposal cap; the threshold is likely infeasible."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Model:
    simulate: Callable[[np.ndarray, np.random.Generator], Any]
    cost_class: str = EXACT
    name: str = "model"

    def __post_init__(self):
        if self.cost_class not in (EXACT, APPROX):
            raise ValueError(f"unknown cost class {self.cost_class!r}")


class Discrepancy:
    """rho(D, D_s) with the observed data D fixed; optional summary map on both sides."""

    def __init__(self, observed, metric=euclidean_discrepancy, summary=None):
        self.metric = metric
        self.summary = summary
        self.observed = observed
        self._obs = summary(observed) if summary is not None else observed

    def __call__(self, simulated) -> float:
        sim = self.summary(simulated) if self.summary is not None else simulated
        return self.metric(self._obs, sim)


@dataclass(frozen=True)
class MmConfig:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")

    def split(self, M: int) -> tuple[int, int]:
        """(ceil(alpha M), floor((1 - alpha) M)), robust to float noise in alpha * M."""
        m_hat = math.ceil(round(self.alpha * M, 9))
        m_tilde = math.floor(round((1.0 - self.alpha) * M, 9))
        return m_hat, m_tilde


@dataclass
class SamplerReport:
    method: str
    final: WeightedPopulation
    levels: list[WeightedPopulation]
    epsilons: tuple[float, ...]
    exact_sim_count: int = 0
    approx_sim_count: int = 0
    wall_time: float = 0.0
    level_stats: list[dict] = field(default_factory=list)
    extra_populations: dict[str, list[WeightedPopulation]] = field(default_factory=dict)
    accepted: dict[str, list[np.ndarray]] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilons": list(self.epsilons),
            "particles": self.final.size,
            "exact_sim_count": self.exact_sim_count,
            "approx_sim_count": self.approx_sim_count,
            "wall_time": self.wall_time,
            "levels": self.level_stats,
            "final_mean": self.final.mean().tolist(),
            "final_std": self.final.std().tolist(),
            "meta": self.meta,
        }

    def write(self, out_dir, names: Sequence[str] | None = None, prefix: str = "") -> list[Path]:
        """Report JSON plus one population CSV per level (and per extra stage)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / f"{prefix}report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
        for pop in self.levels:
            p = out / f"{prefix}population_level{pop.level}.csv"
            write_population_csv(pop, p, names)
            written.append(p)
        for key, pops in self.extra_populations.items():
            for pop in pops:
                p = out / f"{prefix}{key}_level{pop.level}.csv"
                write_population_csv(pop, p, names)
                written.append(p)
        return written


def _as_streams(seed) -> Streams:
    return seed if isinstance(seed, Streams) else Streams(int(seed))


def importance_weights(thetas, prev: WeightedPopulation, kernel: GaussianKernel,
                       prior: BoxPrior, chunk: int = 256) -> np.ndarray:
    """w_i = p(theta_i) / sum_j w_j K(theta_i | prev_j), denominators in log space."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    wprev = prev.normalized_weights()
    dens = np.asarray(prior.density(thetas), dtype=float)
    logp = np.full(thetas.shape[0], -np.inf)
    logp[dens > 0] = np.log(dens[dens > 0])
    # Whiten once so pairwise distances need no per-pair triangular solve.
    U = solve_triangular(kernel.chol, thetas.T, lower=True).T
    V = solve_triangular(kernel.chol, prev.particles.T, lower=True).T
    logden = np.empty(thetas.shape[0])
    for s in range(0, U.shape[0], chunk):
        d = U[s:s + chunk, None, :] - V[None, :, :]
        logk = kernel.log_norm_const - 0.5 * np.einsum("ijk,ijk->ij", d, d)
        logden[s:s + chunk] = logsumexp(logk, b=wprev, axis=1)
    if np.any(~np.isfinite(logden)):
        raise FloatingPointError("importance weight denominator underflowed to zero")
    return np.exp(logp - logden)


def importance_weight(theta, prev: WeightedPopulation, kernel: GaussianKernel,
                      prior: BoxPrior) -> float:
    p = prior.density(theta)
    if p == 0:
        return 0.0
    logden = kernel.log_mixture(theta, prev.particles, prev.normalized_weights())
    if not np.isfinite(logden):
        raise FloatingPointError("importance weight denominator underflowed to zero")
    return float(np.exp(np.log(p) - logden))


@dataclass
class _StageResult:
    thetas: np.ndarray
    distances: np.ndarray
    attempts: np.ndarray
    simulations: int
    prior_rejections: int


def _propagate(model: Model, prior: BoxPrior, rho: Discrepancy, eps: float, n: int,
               streams: Streams, stage: int, level: int,
               base: WeightedPopulation | None = None, kernel: GaussianKernel | None = None,
               max_attempts: int = MAX_ATTEMPTS, stage_name: str = "") -> _StageResult:
    """Fill ``n`` particles with the Repeat-Until loop of the SMC samplers.

    With ``base`` and ``kernel`` the proposal is "pick a base particle by weight,
    perturb by the kernel"; without them it is a plain prior draw. Proposals
    outside the prior support are discarded before any simulation.
    """
    dim = prior.dim
    thetas = np.empty((n, dim))
    dists = np.empty(n)
    attempts = np.empty(n, dtype=np.int64)
    sims = rejections = 0
    if base is not None:
        cdf = np.cumsum(base.normalized_weights())
        cdf /= cdf[-1]
    for i in range(n):
        for attempt in range(max_attempts):
            rng = streams.rng(stage, level, i, attempt)
            if base is None:
                theta = prior.sample(rng)
            else:
                j = min(int(np.searchsorted(cdf, rng.random(), side="right")), base.size - 1)
                theta = kernel.sample(base.particles[j], rng)
                if prior.density(theta) == 0:
                    rejections += 1
                    continue
            data = model.simulate(theta, rng)
            sims += 1
            d = rho(data)
            if d <= eps:
                break
        else:
            raise AttemptCapError(
                f"level {level} ({stage_name or stage}): particle {i} not accepted "
                f"after {max_attempts} attempts at epsilon={eps}")
        thetas[i] = theta
        dists[i] = d
        attempts[i] = attempt
    assert np.all(dists <= eps)
    return _StageResult(thetas, dists, attempts, sims, rejections)


class _Ledger:
    """Accumulates simulation counts and per-level stats for a report."""

    def __init__(self):
        self.exact = 0
        self.approx = 0
        self.stats: list[dict] = []
        self.accepted: dict[str, list[np.ndarray]] = {}

    def record(self, stage: str, level: int, eps: float, model: Model, res: _StageResult):
        kind = "approx" if model.cost_class == APPROX else "exact"
        if kind == "approx":
            self.approx += res.simulations
        else:
            self.exact += res.simulations
        self.stats.append({
            "stage": stage,
            "level": level,
            "epsilon": eps,
            "model": model.name,
            "sim_kind": kind,
            "particles": int(res.thetas.shape[0]),
            "simulations": res.simulations,
            "prior_rejections": res.prior_rejections,
            "acceptance_rate": res.thetas.shape[0] / max(res.simulations, 1),
            "max_distance": float(res.distances.max()),
        })
        self.accepted.setdefault(stage, []).append(res.attempts)


def _initial_population(prior: BoxPrior, M: int, streams: Streams) -> WeightedPopulation:
    particles = np.array([prior.sample(streams.rng(STREAM_INIT, 0, i)) for i in range(M)])
    return WeightedPopulation.uniform(particles, level=0)


def _check_common(schedule, M):
    if not isinstance(schedule, ThresholdSchedule):
        schedule = ThresholdSchedule(tuple(schedule))
    if M < 2:
        raise ConfigError("at least two particles are required")
    return schedule


def _rejection(model, prior, rho, epsilon, M, seed, max_attempts):
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    streams = _as_streams(seed)
    t0 = time.perf_counter()
    ledger = _Ledger()
    res = _propagate(model, prior, rho, epsilon, M, streams, STREAM_EXACT, 1,
                     max_attempts=max_attempts, stage_name="rejection")
    ledger.record("rejection", 1, epsilon, model, res)
    pop = WeightedPopulation.uniform(res.thetas, level=1, epsilon=epsilon)
    return SamplerReport("rejection", pop, [pop], (float(epsilon),), ledger.exact,
                         ledger.approx, time.perf_counter() - t0, ledger.stats,
                         accepted=ledger.accepted)


def abc_rejection(model: Model, prior: BoxPrior, rho: Discrepancy, epsilon: float, M: int,
                  seed, max_attempts: int = MAX_ATTEMPTS) -> WeightedPopulation:
    """M prior draws accepted at rho <= epsilon, each with its own simulation."""
    return _rejection(model, prior, rho, epsilon, M, seed, max_attempts).final


def rejection_report(model, prior, rho, epsilon, M, seed,
                     max_attempts: int = MAX_ATTEMPTS) -> SamplerReport:
    return _rejection(model, prior, rho, epsilon, M, seed, max_attempts)


def smc_abc(model: Model, prior: BoxPrior, rho: Discrepancy, schedule, M: int, seed,
            max_attempts: int = MAX_ATTEMPTS) -> SamplerReport:
    """Sequential Monte Carlo ABC with the adaptive Gaussian kernel."""
    schedule = _check_common(schedule, M)
    streams = _as_streams(seed)
    t0 = time.perf_counter()
    ledger = _Ledger()
    prev = _initial_population(prior, M, streams)
    levels = []
    for r, eps in enumerate(schedule, start=1):
        kernel = adapt_kernel(prev.particles)
        res = _propagate(model, prior, rho, eps, M, streams, STREAM_EXACT, r, prev, kernel,
                         max_attempts, "smc")
        ledger.record("smc", r, eps, model, res)
        w = importance_weights(res.thetas, prev, kernel, prior)
        pop = WeightedPopulation(res.thetas, w, r, eps)
        prev = multinomial_resample(pop, streams.rng(STREAM_RESAMPLE, r))
        levels.append(prev)
    return SamplerReport("smc", prev, levels, schedule.epsilons, ledger.exact, ledger.approx,
                         time.perf_counter() - t0, ledger.stats, accepted=ledger.accepted)


def pc_smc_abc(exact_model: Model, approx_model: Model, prior: BoxPrior, rho: Discrepancy,
               schedule, M: int, seed, max_attempts: int = MAX_ATTEMPTS,
               rho_approx: Discrepancy | None = None) -> SamplerReport:
    """Preconditioned SMC-ABC.

    Each level first moves the population to eps_r under the cheap model
    (the preconditioner), then proposes exact-model particles from the
    preconditioner population with a kernel adapted to it.
    """
    schedule = _check_common(schedule, M)
    rho_approx = rho if rho_approx is None else rho_approx
    streams = _as_streams(seed)
    t0 = time.perf_counter()
    ledger = _Ledger()
    prev = _initial_population(prior, M, streams)
    levels, preconditioners = [], []
    for r, eps in enumerate(schedule, start=1):
        kernel = adapt_kernel(prev.particles)
        res1 = _propagate(approx_model, prior, rho_approx, eps, M, streams, STREAM_APPROX, r,
                          prev, kernel, max_attempts, "preconditioner")
        ledger.record("preconditioner", r, eps, approx_model, res1)
        pre = WeightedPopulation(res1.thetas, importance_weights(res1.thetas, prev, kernel, prior),
                                 r, eps)
        preconditioners.append(pre)

        kernel2 = adapt_kernel(pre.particles)
        res2 = _propagate(exact_model, prior, rho, eps, M, streams, STREAM_EXACT, r,
                          pre, kernel2, max_attempts, "correction")
        ledger.record("correction", r, eps, exact_model, res2)
        pop = WeightedPopulation(res2.thetas, importance_weights(res2.thetas, pre, kernel2, prior),
                                 r, eps)
        prev = multinomial_resample(pop, streams.rng(STREAM_RESAMPLE, r))
        levels.append(prev)
    return SamplerReport("pc-smc", prev, levels, schedule.epsilons, ledger.exact, ledger.approx,
                         time.perf_counter() - t0, ledger.stats,
                         extra_populations={"preconditioner": preconditioners},
                         accepted=ledger.accepted)


def mm_smc_abc(exact_model: Model, approx_model: Model, prior: BoxPrior, rho: Discrepancy,
               schedule, M: int, cfg: MmConfig | float, seed,
               max_attempts: int = MAX_ATTEMPTS,
               rho_approx: Discrepancy | None = None) -> SamplerReport:
    """Moment-matching SMC-ABC.

    A full SMC-ABC run of floor((1-alpha)M) particles under the cheap model is
    made first. Each level then draws ceil(alpha M) exact-model particles, maps
    the cheap-model particles of that level onto their mean and covariance, and
    resamples the pooled set back to M particles. The exact subset carries
    total mass M_hat/M and the transformed subset M_tilde/M before resampling.
    """
    schedule = _check_common(schedule, M)
    cfg = cfg if isinstance(cfg, MmConfig) else MmConfig(float(cfg))
    m_hat, m_tilde = cfg.split(M)
    if m_hat < 2:
        raise ConfigError(f"alpha={cfg.alpha} gives {m_hat} exact particles; need at least 2")
    if m_tilde == 1:
        raise ConfigError("a single approximate particle has no covariance")
    rho_approx = rho if rho_approx is None else rho_approx
    streams = _as_streams(seed)
    t0 = time.perf_counter()
    ledger = _Ledger()

    approx_levels: list[WeightedPopulation] = []
    if m_tilde > 0:
        approx_run = smc_abc(approx_model, prior, rho_approx, schedule, m_tilde,
                             streams.child(STREAM_APPROX_RUN), max_attempts)
        approx_levels = approx_run.levels
        ledger.approx += approx_run.approx_sim_count
        ledger.exact += approx_run.exact_sim_count
        for s in approx_run.level_stats:
            ledger.stats.append({**s, "stage": "approx-run"})

    prev = _initial_population(prior, M, streams)
    levels, pooled_levels, transformed_levels = [], [], []
    for r, eps in enumerate(schedule, start=1):
        kernel = adapt_kernel(prev.particles)
        res = _propagate(exact_model, prior, rho, eps, m_hat, streams, STREAM_EXACT, r,
                         prev, kernel, max_attempts, "exact")
        ledger.record("exact", r, eps, exact_model, res)
        w = importance_weights(res.thetas, prev, kernel, prior)
        if m_tilde > 0:
            src = approx_levels[r - 1]
            hat = empirical_moments(res.thetas)
            til = empirical_moments(src.particles)
            moved = moment_match_transform(src.particles, til, hat)
            transformed_levels.append(WeightedPopulation(moved, src.weights, r, eps))
            wt = src.normalized_weights() * (m_tilde / M)
            we = w / w.sum() * (m_hat / M)
            pooled = WeightedPopulation(np.vstack([res.thetas, moved]),
                                        np.concatenate([we, wt]), r, eps)
        else:
            pooled = WeightedPopulation(res.thetas, w, r, eps)
        pooled_levels.append(pooled)
        prev = multinomial_resample(pooled, streams.rng(STREAM_RESAMPLE, r), size=M)
        levels.append(prev)
    extra = {"pooled": pooled_levels}
    if m_tilde > 0:
        extra["approx"] = approx_levels
        extra["transformed"] = transformed_levels
    return SamplerReport("mm-smc", prev, levels, schedule.epsilons, ledger.exact, ledger.approx,
                         time.perf_counter() - t0, ledger.stats, extra_populations=extra,
                         accepted=ledger.accepted,
                         meta={"alpha": cfg.alpha, "m_hat": m_hat, "m_tilde": m_tilde})

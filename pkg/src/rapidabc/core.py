"""Parameter-space primitives shared by the samplers.

Priors, weighted particle populations, discrepancy metrics, multinomial
resampling, threshold schedules and the seeded stream factory all live here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PRIOR_MAX_RETRIES = 10**6


class UnsatisfiablePriorError(RuntimeError):
    pass


class DegeneratePopulationError(RuntimeError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BoxPrior:
    """Uniform prior on a box, optionally cut by pairwise ``theta[a] <= theta[b]`` constraints.

    The density is the unnormalized indicator of the feasible region: all weight
    formulas are invariant to a constant factor once weights are normalized.
    """

    lower: np.ndarray
    upper: np.ndarray
    constraints: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        lo = _frozen(self.lower)
        hi = _frozen(self.upper)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper must be 1-D sequences of equal length")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        cons = tuple((int(a), int(b)) for a, b in self.constraints)
        for a, b in cons:
            if not (0 <= a < lo.size and 0 <= b < lo.size):
                raise ValueError(f"constraint ({a}, {b}) out of range")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "constraints", cons)

    @property
    def dim(self) -> int:
        return self.lower.size

    def _feasible(self, theta: np.ndarray) -> np.ndarray:
        ok = np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)
        for a, b in self.constraints:
            ok &= theta[..., a] <= theta[..., b]
        return ok

    def density(self, theta) -> float | np.ndarray:
        """1 inside the feasible region, 0 outside. Accepts one vector or a stack."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {theta.shape[-1]}")
        ok = self._feasible(theta) & np.all(np.isfinite(theta), axis=-1)
        if ok.ndim == 0:
            return float(ok)
        return ok.astype(float)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Rejection from the bounding box until every constraint holds."""
        for _ in range(PRIOR_MAX_RETRIES):
            theta = rng.uniform(self.lower, self.upper)
            if self._feasible(theta):
                return theta
        raise UnsatisfiablePriorError(
            f"no feasible prior draw after {PRIOR_MAX_RETRIES} retries")


def sample_prior(prior: BoxPrior, rng: np.random.Generator) -> np.ndarray:
    return prior.sample(rng)


def prior_density(prior: BoxPrior, theta) -> float:
    return prior.density(theta)


@dataclass(frozen=True)
class WeightedPopulation:
    """M particles with importance weights at one threshold level."""

    particles: np.ndarray
    weights: np.ndarray
    level: int = 0
    epsilon: float = math.inf

    def __post_init__(self):
        p = _frozen(self.particles)
        if p.ndim == 1:
            p = _frozen(p[:, None])
        w = _frozen(self.weights)
        if p.ndim != 2 or w.shape != (p.shape[0],):
            raise ValueError("particles must be (M, n) with one weight per particle")
        if p.shape[0] < 2:
            raise ValueError("a population needs at least two particles")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, particles, level=0, epsilon=math.inf):
        particles = np.asarray(particles, dtype=float)
        m = particles.shape[0]
        return cls(particles, np.full(m, 1.0 / m), level, epsilon)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def normalized_weights(self) -> np.ndarray:
        total = self.weights.sum()
        if total <= 0:
            raise DegeneratePopulationError("all particle weights are zero")
        return self.weights / total

    def mean(self) -> np.ndarray:
        return self.normalized_weights() @ self.particles

    def std(self) -> np.ndarray:
        w = self.normalized_weights()
        mu = w @ self.particles
        return np.sqrt(w @ (self.particles - mu) ** 2)

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        write_population_csv(self, path, names)


def write_population_csv(pop: WeightedPopulation, path, names=None) -> None:
    names = list(names) if names is not None else [f"theta{k}" for k in range(pop.dim)]
    if len(names) != pop.dim:
        raise ValueError("one name per parameter component is required")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*names, "weight"])
        for theta, w in zip(pop.particles, pop.weights):
            writer.writerow([repr(float(v)) for v in theta] + [repr(float(w))])


def read_population_csv(path, level=0, epsilon=math.inf) -> tuple[WeightedPopulation, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[-1] != "weight":
        raise ValueError(f"{path}: last column must be 'weight'")
    return WeightedPopulation(body[:, :-1], body[:, -1], level, epsilon), header[:-1]


def euclidean_discrepancy(obs, sim) -> float:
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if obs.ndim != 1 or obs.shape != sim.shape:
        raise ValueError(f"length mismatch: {obs.shape} vs {sim.shape}")
    return float(np.sqrt(np.sum((obs - sim) ** 2)))


def frobenius_discrepancy(obs, sim) -> float:
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if obs.ndim != 2 or obs.shape != sim.shape:
        raise ValueError(f"shape mismatch: {obs.shape} vs {sim.shape}")
    return float(np.sqrt(np.sum((obs - sim) ** 2)))


def multinomial_resample(pop: WeightedPopulation, rng: np.random.Generator,
                         size: int | None = None) -> WeightedPopulation:
    """Draw ``size`` (default M) particles with replacement, proportional to weight."""
    w = pop.normalized_weights()
    m = pop.size if size is None else size
    idx = rng.choice(pop.size, size=m, replace=True, p=w)
    return WeightedPopulation.uniform(pop.particles[idx], pop.level, pop.epsilon)


@dataclass(frozen=True)
class ThresholdSchedule:
    epsilons: tuple[float, ...]

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("schedule is empty")
        if any(e <= 0 for e in eps):
            raise ValueError("thresholds must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("thresholds must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)

    @classmethod
    def halving(cls, eps0: float, levels: int) -> "ThresholdSchedule":
        """eps_r = eps_{r-1} / 2 for r = 1..levels, starting from ``eps0``."""
        return cls(tuple(eps0 / 2.0**r for r in range(1, levels + 1)))

    def __len__(self):
        return len(self.epsilons)

    def __iter__(self):
        return iter(self.epsilons)

    def __getitem__(self, k):
        return self.epsilons[k]

    @property
    def final(self) -> float:
        return self.epsilons[-1]


# Stream keys. Every random draw in a run comes from default_rng([seed, *key]).
STREAM_INIT = 0
STREAM_EXACT = 1
STREAM_APPROX = 2
STREAM_RESAMPLE = 3
STREAM_APPROX_RUN = 4
STREAM_DATA = 5


@dataclass(frozen=True)
class Streams:
    """Derives independent generators from one 64-bit seed and an integer key.

    Keys are ``(stage, level, particle, attempt)``-style tuples, so results do
    not depend on how the work is scheduled.
    """

    seed: int
    prefix: tuple[int, ...] = field(default=())

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), *self.prefix, *map(int, key)])

    def child(self, *key: int) -> "Streams":
        return Streams(self.seed, self.prefix + tuple(map(int, key)))

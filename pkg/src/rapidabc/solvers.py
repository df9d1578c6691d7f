"""Adaptive continuum solvers and the continuum-limit approximate models.

RKF45 integrates the 0-D growth laws; a backward-Euler, central-space scheme
with fixed-point iteration integrates the 1-D reaction-diffusion equation with
zero-flux boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .samplers import APPROX, Model

MIN_STEP = 1e-14
MAX_GROWTH = 5.0
MIN_SHRINK = 0.1


class StiffnessError(RuntimeError):
    """The adaptive step fell below MIN_STEP."""


class FixedPointError(RuntimeError):
    pass


# Fehlberg tableau as exact rationals; floats are derived from these.
_F = Fraction
RKF_C = (_F(0), _F(1, 4), _F(3, 8), _F(12, 13), _F(1), _F(1, 2))
RKF_A = (
    (),
    (_F(1, 4),),
    (_F(3, 32), _F(9, 32)),
    (_F(1932, 2197), _F(-7200, 2197), _F(7296, 2197)),
    (_F(439, 216), _F(-8), _F(3680, 513), _F(-845, 4104)),
    (_F(-8, 27), _F(2), _F(-3544, 2565), _F(1859, 4104), _F(-11, 40)),
)
RKF_B4 = (_F(25, 216), _F(0), _F(1408, 2565), _F(2197, 4104), _F(-1, 5), _F(0))
RKF_B5 = (_F(16, 135), _F(0), _F(6656, 12825), _F(28561, 56430), _F(-9, 50), _F(2, 55))

_C = [float(x) for x in RKF_C]
_A = [[float(x) for x in row] for row in RKF_A]
_B4 = np.array([float(x) for x in RKF_B4])
_B5 = np.array([float(x) for x in RKF_B5])


@dataclass(frozen=True)
class OdeProblem:
    rhs: Callable
    c0: float | np.ndarray
    times: tuple[float, ...]
    tol: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError("output times must be non-negative and increasing")


def _rkf_step(rhs, t, c, h):
    k = []
    for s in range(6):
        ci = c
        for a, kk in zip(_A[s], k):
            ci = ci + h * a * kk
        k.append(np.asarray(rhs(t + _C[s] * h, ci), dtype=float))
    K = np.stack(k)
    c4 = c + h * np.tensordot(_B4, K, axes=1)
    c5 = c + h * np.tensordot(_B5, K, axes=1)
    return c4, c5


def _rescale(err: float, s: float) -> float:
    """Step factor clamped to [MIN_SHRINK, MAX_GROWTH]; an overflowed trial
    (non-finite err) shrinks, since a nan step would never terminate."""
    if not math.isfinite(err):
        return MIN_SHRINK
    if err == 0:
        return MAX_GROWTH
    return min(MAX_GROWTH, max(MIN_SHRINK, s))


def rkf45_solve(p: OdeProblem, return_stats: bool = False):
    """Solution at each output time; the fourth-order estimate is propagated.

    A step is accepted when |c4 - c5| <= tol (max norm for vector states) and
    every attempt rescales the step by s = (tol / (2 err))^(1/4), clamped to
    [MIN_SHRINK, MAX_GROWTH]. Steps are clipped to land exactly on output times.
    """
    times = np.asarray(p.times, dtype=float)
    c = np.asarray(p.c0, dtype=float).copy()
    t = 0.0
    h = times[-1] / 1000.0 if times[-1] > 0 else 1.0
    out = []
    accepted = rejected = 0
    for target in times:
        while t < target:
            step = min(h, target - t)
            if step < MIN_STEP:
                if target - t < MIN_STEP:
                    t = target
                    break
                raise StiffnessError(f"RKF45 step {step:.3g} below {MIN_STEP} at t={t}")
            with np.errstate(over="ignore", invalid="ignore"):
                c4, c5 = _rkf_step(p.rhs, t, c, step)
                err = float(np.max(np.abs(c4 - c5)))
            s = _rescale(err, (p.tol / (2.0 * err)) ** 0.25 if err > 0 else 0.0)
            if err <= p.tol:
                assert err <= p.tol  # acceptance inequality of every accepted step
                t = target if step == target - t else t + step
                c = c4
                accepted += 1
                # A clipped step says nothing about the unclipped size; only grow from h.
                h = max(h, step * s) if step < h else step * s
            else:
                rejected += 1
                h = step * s
        out.append(c.copy())
    res = np.array(out)
    if return_stats:
        return res, {"accepted": accepted, "rejected": rejected}
    return res


def weak_allee_rhs(c, lam: float, K: float, A: float):
    return lam * c * (1.0 - c / K) * (A + c) / K


def logistic_rhs(c, lam: float, K: float):
    return lam * c * (1.0 - c / K)


def logistic_solution(t, c0: float, lam: float, K: float):
    e = np.exp(lam * np.asarray(t, dtype=float))
    return K * c0 * e / (K + c0 * (e - 1.0))


@dataclass(frozen=True)
class PdeProblem:
    D: float
    lam: float
    reaction: Callable  # c -> c f(c), vectorized
    c0: np.ndarray
    dx: float
    times: tuple[float, ...]
    tol: float = 1e-4
    inner_tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        if self.D < 0 or not self.dx > 0 or not self.tol > 0:
            raise ValueError("need D >= 0, dx > 0, tol > 0")
        if np.asarray(self.c0).ndim != 1 or np.asarray(self.c0).size < 3:
            raise ValueError("initial profile needs at least three nodes")
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError("output times must be non-negative and increasing")


def _neumann(c):
    c[0] = c[1]
    c[-1] = c[-2]
    return c


def _fe_rate(c, D, lam, reaction, dx):
    r = np.zeros_like(c)
    r[1:-1] = D * (c[2:] - 2.0 * c[1:-1] + c[:-2]) / dx**2 + lam * reaction(c[1:-1])
    return r


def _btcs_matrix(n, r):
    """Banded (1, 1) form of the implicit operator with zero-flux boundary rows."""
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 + 2.0 * r
    ab[0, 2:] = -r
    ab[2, :-2] = -r
    # Row 0: c_0 - c_1 = 0; row n-1: c_{n-1} - c_{n-2} = 0.
    ab[1, 0] = 1.0
    ab[0, 1] = -1.0
    ab[1, -1] = 1.0
    ab[2, -2] = -1.0
    return ab


def _btcs_step(c, h, p: PdeProblem):
    """One implicit step by fixed-point iteration; returns (solution, residual history) or None."""
    n = c.size
    ab = _btcs_matrix(n, p.D * h / p.dx**2)
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        return _picard(c, h, p, ab, history), history


def _picard(c, h, p: PdeProblem, ab, history):
    guess = _neumann(c + h * _fe_rate(c, p.D, p.lam, p.reaction, p.dx))
    for _ in range(p.max_iter):
        rhs = c.copy()
        rhs[1:-1] += h * p.lam * p.reaction(guess[1:-1])
        rhs[0] = rhs[-1] = 0.0
        if not np.all(np.isfinite(rhs)):
            return None
        new = solve_banded((1, 1), ab, rhs)
        diff = float(np.max(np.abs(new - guess)))
        history.append(diff)
        guess = new
        if diff <= p.inner_tol * max(1.0, float(np.max(np.abs(new)))):
            return new
    return None


def btcs_solve(p: PdeProblem, return_stats: bool = False):
    """N x T matrix of the solution at each output time.

    The truncation error of a step is half the max-norm gap between the
    backward-Euler and forward-Euler updates; steps are rescaled by
    s = 0.9 sqrt(tol / err), clamped to [MIN_SHRINK, MAX_GROWTH]. A step whose
    fixed-point iteration stalls is retried at half the size.
    """
    times = np.asarray(p.times, dtype=float)
    c = _neumann(np.asarray(p.c0, dtype=float).copy())
    t = 0.0
    h = 0.25 * p.dx**2 / max(p.D, np.finfo(float).eps)
    if times[-1] > 0:
        h = min(h, float(times[-1]))  # D = 0 would otherwise start near 1e15
    out = []
    stats = {"accepted": 0, "rejected": 0, "stalled": 0, "max_iterations": 0,
             "nonmonotone_residuals": 0}
    for target in times:
        while t < target:
            step = min(h, target - t)
            if step < MIN_STEP:
                if target - t < MIN_STEP:
                    t = target
                    break
                raise StiffnessError(f"BTCS step {step:.3g} below {MIN_STEP} at t={t}")
            new, history = _btcs_step(c, step, p)
            if new is None:
                stats["stalled"] += 1
                if step / 2 < MIN_STEP:
                    raise FixedPointError(
                        f"fixed-point iteration did not converge in {p.max_iter} iterations at t={t}")
                h = step / 2
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                fe = _neumann(c + step * _fe_rate(c, p.D, p.lam, p.reaction, p.dx))
                err = 0.5 * float(np.max(np.abs(new - fe)))
            s = _rescale(err, 0.9 * math.sqrt(p.tol / err) if err > 0 else 0.0)
            if err <= p.tol:
                assert err <= p.tol  # acceptance inequality of every accepted step
                t = target if step == target - t else t + step
                c = new
                stats["accepted"] += 1
                stats["max_iterations"] = max(stats["max_iterations"], len(history))
                if any(b > a for a, b in zip(history, history[1:])):
                    stats["nonmonotone_residuals"] += 1
                h = max(h, step * s) if step < h else step * s
            else:
                stats["rejected"] += 1
                h = step * s
        out.append(c.copy())
    res = np.column_stack(out)
    if return_stats:
        return res, stats
    return res


def logistic_reaction(K: float):
    return lambda c: c * (1.0 - c / K)


def weak_allee_reaction(K: float, A: float):
    return lambda c: c * (1.0 - c / K) * (A + c) / K


def scratch_initial_profile(I: int, start: int, stop: int, p_out: float) -> np.ndarray:
    """Expected initial occupancy per column: p_out outside [start, stop), 0 inside."""
    c = np.full(I, float(p_out))
    c[start:stop] = 0.0
    return c


def fisher_kpp_model_solve(theta, setup, delta: float = 1.0, tol: float = 1e-4) -> np.ndarray:
    """Deterministic I x T column-density profile for theta = (lambda, D, K)."""
    lam, D, K = (float(v) for v in theta)
    c0 = scratch_initial_profile(setup.I, setup.start, setup.stop, setup.p_out)
    prob = PdeProblem(D, lam, logistic_reaction(K), c0, delta * math.sqrt(3.0) / 2.0,
                      tuple(setup.times), tol)
    return btcs_solve(prob)


def fisher_kpp_model(setup, delta: float = 1.0, tol: float = 1e-4) -> Model:
    """Continuum approximate model for the scratch assay; ignores its random stream."""
    return Model(lambda theta, rng: fisher_kpp_model_solve(theta, setup, delta, tol), APPROX,
                 "fisher-kpp")


def allee_ode_solve(theta, setup, tol: float = 1e-6) -> np.ndarray:
    lam, A, K = (float(v) for v in theta)
    prob = OdeProblem(lambda t, c: weak_allee_rhs(c, lam, K, A), setup.p0, tuple(setup.times), tol)
    return rkf45_solve(prob)


def allee_ode_model(setup, tol: float = 1e-6) -> Model:
    """Continuum approximate model for the weak Allee growth data."""
    return Model(lambda theta, rng: allee_ode_solve(theta, setup, tol), APPROX, "allee-ode")
